import os
from pathlib import Path
from typing import List, Union

IMAGE_EXTENSIONS = (".png", ".pgm")

PathLike = Union[str, Path]


def ensure_dir_exists(dir_path: PathLike) -> Path:
    """Ensure a directory exists, create it if it doesn't"""
    path = Path(dir_path)
    os.makedirs(path, exist_ok=True)
    return path


def get_file_extension(filename: PathLike) -> str:
    """Get the extension of a file"""
    return os.path.splitext(str(filename))[1].lower()


def list_images(dir_path: PathLike) -> List[Path]:
    """List the readable image files of a directory in name order"""
    path = Path(dir_path)
    if not path.is_dir():
        return []
    return sorted(p for p in path.iterdir() if p.is_file() and get_file_extension(p) in IMAGE_EXTENSIONS)


def relative_to(path: PathLike, root: PathLike) -> str:
    """POSIX-style relative path, as stored in manifests"""
    return Path(path).resolve().relative_to(Path(root).resolve()).as_posix()
