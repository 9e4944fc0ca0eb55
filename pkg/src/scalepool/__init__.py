"""Scale-detection tasks, a small convolutional network engine, and sensitivity analysis."""

__version__ = "0.1.0"
