"""Executable model of light profinite sets as towers of finite sets."""

__version__ = "0.1.0"
