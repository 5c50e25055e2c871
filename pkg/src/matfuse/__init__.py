"""Crystal-structure + text fusion model for scalar material property
prediction, with a full train / evaluate / zero-shot / ablation harness."""

__version__ = "0.1.0"
