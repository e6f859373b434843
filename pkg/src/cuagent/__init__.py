"""Hybrid GUI/code multi-agent runtime for computer-use tasks."""

__version__ = "0.1.0"
