"""Monte Carlo laboratory for stochastic heat and wave equations driven by
spatially homogeneous Gaussian noise."""

__version__ = "0.1.0"
