# This file makes the directory a proper Python package
