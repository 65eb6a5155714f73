"""Decentralized primal-dual and communication-sliding solvers."""
__version__ = "0.1.0"
