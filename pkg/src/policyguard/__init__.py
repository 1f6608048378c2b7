"""Solver-backed guardrails: formal policy models and claim verification."""

__version__ = "0.1.0"
