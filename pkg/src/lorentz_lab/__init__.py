"""Random Lorentz gases: billiard kernel, lazy random environments, skew-product cocycles, toy walks."""

__version__ = "0.1.0"
