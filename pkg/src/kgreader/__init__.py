"""Knowledge-graph-enhanced passage reader for open-domain QA."""

__version__ = "0.1.0"
