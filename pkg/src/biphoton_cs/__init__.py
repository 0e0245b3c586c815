"""Compressive double-pixel imaging of biphoton correlations."""
