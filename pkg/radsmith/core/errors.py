class RadSmithError(Exception):
    """Base class for every error raised by the toolkit"""


class ArgumentError(RadSmithError, ValueError):
    """Invalid argument, shape or configuration value"""


class DecodeError(RadSmithError):
    """Image file could not be read or has an unsupported format"""

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"Cannot decode image '{self.path}': {reason}")


class ManifestError(RadSmithError):
    """Dataset manifest is missing, unreadable or malformed"""


class CheckpointError(RadSmithError):
    """Checkpoint container is malformed or does not match the model"""
