"""Monte Carlo percolation toolkit: lattices, cluster labeling, estimators and variants."""

__version__ = "0.1.0"
