"""Bayesian piecewise-linear latent growth models for longitudinal
multi-outcome cognitive test batteries."""

__version__ = "0.1.0"
