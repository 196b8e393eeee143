"""Person knowledge-graph extraction pipeline and multi-granularity evaluation."""

__version__ = "0.1.0"
