"""cgvamp-lab - CG-VAMP solvers and oracle diagnostics for compressed sensing"""

__version__ = "1.0.0"
