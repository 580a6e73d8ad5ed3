"""Validation harness, desk-scale experiments and the command line."""
