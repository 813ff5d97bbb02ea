"""Synthetic data, training, retrieval and experiment drivers."""
