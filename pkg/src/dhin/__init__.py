"""Deterministic simulation of a decentralized health intelligence network."""

__version__ = "0.1.0"
