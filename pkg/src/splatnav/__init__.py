"""Floor-aware Gaussian-splat scenes, topological map generation and navigation evaluation."""

__version__ = "0.1.0"
