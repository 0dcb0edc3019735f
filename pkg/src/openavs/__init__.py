"""Training-free open-vocabulary audio-visual segmentation via message-relay agents."""

__version__ = "0.1.0"
