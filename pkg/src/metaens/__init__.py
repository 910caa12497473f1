"""Meta-learned, label-free ensemble selection for unsupervised outlier detection."""

__version__ = "0.1.0"
