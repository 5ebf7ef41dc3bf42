"""partlift: multi-view lifting of promptable 2D segmentation into labeled 3D parts."""

__version__ = "0.1.0"
