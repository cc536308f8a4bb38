"""Three-party secure CNN inference with block ReLUs and approximate DReLU."""

__version__ = "0.1.0"
