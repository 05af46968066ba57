"""asiplab: a Monte Carlo laboratory for strong approximation of dependent
sums with semi-exponential tails, coupling coefficients, block schemes, and
random matrix cocycles."""

__version__ = "0.1.0"
