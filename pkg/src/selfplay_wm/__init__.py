"""Self-play world-model toolkit for grid puzzles."""

__version__ = "0.1.0"
