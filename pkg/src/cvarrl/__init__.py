"""CVaR bandits and tabular CVaR-UCBVI."""
__version__ = "0.1.0"
