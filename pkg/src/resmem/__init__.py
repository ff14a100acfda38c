"""Residual-memorization toolkit.

Augments a base classifier with a soft k-nearest-neighbor regressor fit on
the classifier's training residuals, and ships a Monte-Carlo laboratory for
the constrained linear-regression analysis of the same idea.
"""

__version__ = "0.1.0"
