"""Simulated multi-replica LLM serving with workload-aware request routing."""

__version__ = "0.1.0"
