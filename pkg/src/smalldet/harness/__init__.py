"""Synthetic data, toy detector, training loop, evaluation, checkpoints."""
