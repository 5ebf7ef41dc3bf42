"""fm-bridge: HTTP sidecar serving segmentation and detection models."""

__version__ = "0.1.0"
