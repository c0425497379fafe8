# This file makes the directory a proper Python package

__version__ = "0.1.0"
