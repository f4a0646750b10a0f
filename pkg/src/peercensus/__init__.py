"""Dynamic-membership byzantine agreement on top of a proof-of-work identity chain."""

__version__ = "0.1.0"
