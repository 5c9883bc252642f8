"""Desk-scale lab for on-policy self-distillation from a privileged-context
self-teacher, over synthetic verifiable arithmetic tasks."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
