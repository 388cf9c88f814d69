"""Desk-scale text-to-CAD RL post-training stack built around MiniQuery."""

__version__ = "0.1.0"
