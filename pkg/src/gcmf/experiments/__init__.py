"""Synthetic generators, metrics and the experiment protocols."""
