"""Serve image classifiers over the newline-delimited JSON wire protocol."""

from modeladapter.models import FixtureLinear, ModelLoadError, load_model
from modeladapter.server import serve, serve_stdio, serve_tcp

__all__ = [
    "FixtureLinear",
    "ModelLoadError",
    "load_model",
    "serve",
    "serve_stdio",
    "serve_tcp",
]

__version__ = "0.1.0"
