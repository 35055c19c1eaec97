"""Perceptual preference optimization at desk scale.

Score tables go in, hybrid rewards and curated preference pairs come out,
and a toy conditional diffusion/flow model is tuned on those pairs with a
weighted pairwise denoising objective.
"""

__version__ = "0.1.0"
