"""Conditional diffusion beam priors for top-k beam sweeping over a DFT codebook."""

__version__ = "0.1.0"
