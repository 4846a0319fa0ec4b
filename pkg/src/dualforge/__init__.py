"""Distributed alternating dual maximization (DADM) and its accelerated variant."""

from dualforge.dataio import Dataset, Example, Partition, gen_synthetic, load_libsvm, parse_libsvm, partition
from dualforge.losses import Hinge, Logistic, SmoothedHinge, SmoothHinge, get_loss, smooth
from dualforge.regularizer import ElasticNet, shift

__all__ = [
    "Dataset",
    "Example",
    "Partition",
    "gen_synthetic",
    "load_libsvm",
    "parse_libsvm",
    "partition",
    "Hinge",
    "Logistic",
    "SmoothedHinge",
    "SmoothHinge",
    "get_loss",
    "smooth",
    "ElasticNet",
    "shift",
]

__version__ = "0.1.0"
