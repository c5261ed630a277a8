"""Rate-distortion poisoning of transition kernels in tabular MDPs."""
__version__ = "0.1.0"
