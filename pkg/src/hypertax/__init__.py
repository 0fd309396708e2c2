"""Taxonomy-aware class-incremental classification on the Poincare ball."""

__version__ = "0.1.0"
