"""HTTP API for the CG-VAMP solver."""
