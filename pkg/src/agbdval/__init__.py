"""Validation of gridded aboveground biomass density (AGBD) maps against
inventory plots aggregated to common equal-area zones."""

__version__ = "0.1.0"
