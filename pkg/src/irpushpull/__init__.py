"""Iteratively regularized push-pull for bilevel optimization over digraphs."""

__version__ = "0.1.0"
