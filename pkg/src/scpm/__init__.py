"""Content-preserving text style transfer with a small numpy autodiff engine."""

__version__ = "0.1.0"
