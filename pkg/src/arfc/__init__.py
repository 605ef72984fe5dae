"""Wavelet-attentive encoder-decoder for infrared small target segmentation."""

from .tensor import Parameter, Tensor, no_grad, precision

__all__ = ["Parameter", "Tensor", "no_grad", "precision"]
