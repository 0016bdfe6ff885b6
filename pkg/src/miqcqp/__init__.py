"""Branch-and-bound solver for sparse mixed-integer QCQPs with SDP relaxations."""
__version__ = "0.1.0"
