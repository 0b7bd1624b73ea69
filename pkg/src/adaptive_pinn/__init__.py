"""Physics-informed networks for Allen-Cahn with Metropolis-Hastings adaptive collocation."""

__version__ = "0.1.0"
