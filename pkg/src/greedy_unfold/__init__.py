"""Greedy sparse recovery with differentiable sorting relaxations.

Subpackages:

* ``linalg``      dense vector/matrix kernels, QR least squares, matrix
                  functionals (operator norm, coherence, restricted isometry)
* ``sortops``     exact argsort/permutation machinery and softsort
* ``solvers``     OMP, IHT, their permutation-row forms, and the soft variants
* ``gradients``   reverse-mode tape for the unrolled soft networks
* ``bounds``      min-gaps, approximation constants, temperature bounds, and
                  empirical verification that soft runs track exact runs
* ``experiments`` problem generation, temperature sweeps, network training
* ``cli``         command-line entry point
"""

__version__ = "0.1.0"
