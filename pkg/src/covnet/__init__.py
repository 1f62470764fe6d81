"""Covariance-embedding metric learning with Siamese, Triplet and N-pair baselines."""

__version__ = "0.1.0"
