"""SpecRoute: spectral routing for majority-vote ensembles on dependent data."""

__version__ = "0.1.0"
