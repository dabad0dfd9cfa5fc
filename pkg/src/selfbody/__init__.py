"""Online self-body image acquisition for a simulated tendon-driven arm."""

__version__ = "0.1.0"
