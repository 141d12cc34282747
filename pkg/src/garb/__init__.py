"""Desk-scale latent-diffusion virtual try-off with class-conditioned
timestep embeddings, a synthetic paired dataset, and a full-reference image
quality metric suite."""

__version__ = "0.1.0"
