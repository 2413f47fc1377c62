"""Interactive visual question answering in a simulated cluttered bin."""

__version__ = "0.1.0"
