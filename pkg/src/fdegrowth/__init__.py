"""Growth-rate laboratory for sublinear functional and Volterra differential equations."""
