"""Langevin sampling driven by denoising score models, with error-bound evaluators."""

__version__ = "0.1.0"
