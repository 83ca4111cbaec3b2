"""Specific emitter identification lab: emitters, receive pipeline, features, defender and mimicry attacks."""

__version__ = "0.1.0"
