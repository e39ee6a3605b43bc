"""Per-client LLM serving workload generation, analysis and replay."""

__version__ = "0.1.0"
