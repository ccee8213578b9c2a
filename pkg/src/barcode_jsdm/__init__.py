"""Sparse Bayesian Poisson factorization with binary and continuous latent barcodes."""

__version__ = "0.1.0"
