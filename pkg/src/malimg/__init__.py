"""Malware byte-image classification toolkit.

Subpackages: ``binimg`` (conversion), ``nn`` (tensor core and network),
``optim``, ``augment``, ``metrics``, ``harness`` (training, ablation, CLI
plumbing) and ``estimator`` (scikit-learn front-ends).
"""
from .estimator import ByteImageTransformer, MalwareImageClassifier

__version__ = "0.1.0"

__all__ = ["ByteImageTransformer", "MalwareImageClassifier", "__version__"]
