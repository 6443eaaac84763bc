"""Eigenvalue-corrected least squares for dyadic regression."""
