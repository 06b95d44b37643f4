"""Dataset, checkpoint, training, evaluation and matching services."""
