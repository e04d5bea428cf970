"""Tensor-train networks for tensor-to-vector regression and spectral speech denoising."""

__version__ = "0.1.0"
