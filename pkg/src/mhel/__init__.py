"""Multilingual entity linking: dense retrieval, threshold routing, LLM adjudication."""

__version__ = "0.1.0"
