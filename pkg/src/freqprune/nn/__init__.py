"""Minimal numpy training stack for frequency-pruned separable networks."""
