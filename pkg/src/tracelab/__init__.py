"""Self-similar Delone sets, finite-range operator algebras, and their asymptotic traces."""

__version__ = "0.1.0"
