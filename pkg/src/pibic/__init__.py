"""Lack-of-fit tests built on BIC posterior approximations."""

__version__ = "0.1.0"
