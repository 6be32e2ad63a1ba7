"""unrect: constructive checks for measure-zeroing perturbations of constant-rank maps."""

__version__ = "0.1.0"
