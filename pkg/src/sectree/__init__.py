"""Structure-aware hierarchical retrieval over long itemized filings."""

__version__ = "0.1.0"
