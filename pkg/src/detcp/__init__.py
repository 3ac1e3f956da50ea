"""Decoupled TCP: a transport whose two directions use separate unidirectional paths."""

__version__ = "0.1.0"
