"""Feature-norm OoD detection with L2-normalized features, on small numpy MLPs."""

__version__ = "0.1.0"
