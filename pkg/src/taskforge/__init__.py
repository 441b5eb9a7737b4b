"""Synthetic manipulation-data factory: tasks, agents, and a record/replay pipeline."""

__version__ = "0.1.0"
