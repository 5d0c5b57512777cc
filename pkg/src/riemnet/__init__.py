"""Riemannian optimization for manifold-constrained neural networks."""
