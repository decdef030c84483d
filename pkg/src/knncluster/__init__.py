"""Cluster identification in k-nearest-neighbor graphs.

Synthetic level-set cluster models, exact kNN graph construction, the
noise-free and noisy identification pipelines, closed-form rate formulas
with tail bounds, and a reproducible Monte Carlo harness.
"""

from . import graph, harness, identify, kde, model, theory

__all__ = ["graph", "harness", "identify", "kde", "model", "theory"]

__version__ = "0.1.0"
