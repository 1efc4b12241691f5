"""Differentially private release of GWAS summary statistics."""

__version__ = "0.1.0"
