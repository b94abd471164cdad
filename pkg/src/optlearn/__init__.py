"""Workbench for learning a first-order optimizer and benchmarking it."""

__version__ = "0.1.0"
