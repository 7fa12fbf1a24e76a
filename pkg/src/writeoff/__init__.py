"""Discrete-time survival toolkit for the term structure of loan write-off risk.

Estimates write-off risk from right-censored, left-truncated, recurrent
default-spell panels; fits and compares cross-sectional logistic regression,
discrete-time hazard GLMs and conditional-inference survival trees;
dichotomises probabilistic output through a cost-weighted Youden index; and
evaluates everything with time-dependent diagnostics.
"""

__version__ = "0.1.0"
