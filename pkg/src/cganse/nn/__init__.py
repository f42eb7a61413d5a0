"""Minimal reverse-mode autodiff engine with the layers the enhancers need."""

from . import functional
from .gradcheck import GradCheckReport, grad_check
from .layers import BatchNorm, Conv2d, ConvTranspose2d, Dense, Dropout, Module
from .optim import SGD, Adam, adam_step, init_normal, sgd_step
from .tensor import Parameter, Tape, Tensor, as_tensor

__all__ = [
    "functional", "grad_check", "GradCheckReport", "BatchNorm", "Conv2d",
    "ConvTranspose2d", "Dense", "Dropout", "Module", "SGD", "Adam", "adam_step",
    "init_normal", "sgd_step", "Parameter", "Tape", "Tensor", "as_tensor",
]
