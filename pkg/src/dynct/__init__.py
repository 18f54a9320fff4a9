"""Dynamic CT reconstruction with neural fields and optical-flow regularization."""

__version__ = "0.1.0"
