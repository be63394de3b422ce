"""County-scale SEIR simulation with centrality-ranked vaccine allocation."""

__version__ = "0.1.0"
