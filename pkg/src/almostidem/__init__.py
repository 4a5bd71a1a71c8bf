"""Toolkit for analyzing almost-idempotent unital completely positive maps.

Given a UCP map that is approximately idempotent in completely bounded norm,
the package extracts its approximate algebra of invariant observables,
reconstructs the nearest genuine finite-dimensional C* algebra together with a
certified near-isomorphism, and factorizes the channel through that algebra by
a UCP encode/decode pair with certified residuals.
"""

__version__ = "0.1.0"
