"""Sparse polynomial TD3 control of the Kuramoto-Sivashinsky and
convection-diffusion-reaction equations."""

__version__ = "0.1.0"
