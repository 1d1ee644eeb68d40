"""Two-phase learning controller for quadcopter trajectory tracking.

PID flights label a dataset, small per-axis tanh networks are pre-trained on
it, and the networks keep training in flight on targets corrected by a fuzzy
rule base.
"""

__version__ = "0.1.0"
