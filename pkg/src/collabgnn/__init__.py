"""Two-branch collaborative graph neural networks for paired image/text graphs."""

__version__ = "0.1.0"
