"""Continual learning on graph neural networks.

Subpackages: ``engine`` (autodiff), ``graphs`` (data structures and
generators), ``nn`` (backbones), ``continual`` (forgetting-mitigation
strategies), ``harness`` (experiments, metrics, CLI).
"""

__version__ = "0.1.0"
