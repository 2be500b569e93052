"""Chain-of-action policies over a seeded grid-world testbed."""

__version__ = "0.1.0"
