"""Voice conversion with dual information bottlenecks, for ASR data augmentation."""

__version__ = "0.1.0"
