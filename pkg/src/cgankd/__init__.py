"""Knowledge distillation through generated samples, at desk scale."""

__version__ = "0.1.0"
