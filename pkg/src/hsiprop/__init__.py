"""Anchor-graph two-stage label propagation for single-pixel hyperspectral classification."""
