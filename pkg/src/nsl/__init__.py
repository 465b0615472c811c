"""nsl: a finite-element laboratory for nonlinear Neumann problems on
irregular planar domains.

Subpackages cover rasterized geometry, crack-capable triangulations, P1
fields, a regularized p-Laplacian solver, domain-perturbation stability
experiments, membrane-cut optimization, and constructive Sobolev
approximation tools.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
