"""Model gateway serving the chat and segmentation wire protocols over real models."""

__version__ = "0.1.0"
