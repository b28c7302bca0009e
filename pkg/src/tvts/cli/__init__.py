"""Command-line surface, configuration, checkpoints and the training loop."""
