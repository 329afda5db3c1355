"""PCRNet point cloud registration, ICP baseline and evaluation tools."""

__version__ = "0.1.0"
