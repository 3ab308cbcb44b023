"""Data-sharing contract design via a pruned diffusion-policy soft actor-critic."""

__version__ = "0.1.0"
