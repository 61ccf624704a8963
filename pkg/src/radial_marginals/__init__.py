"""Certified nearly-radial low-dimensional marginals of discrete measures."""
