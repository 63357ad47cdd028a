"""Two-tier HetNet downlink simulator.

Time-reversal prefiltering on the femto tier, tap-selective zero-forcing on
the macro tier, interference-limited power allocation on both, and
worst-case robust SINR bounds under norm-bounded channel estimation error.
"""

__version__ = "0.1.0"
