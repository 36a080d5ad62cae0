"""
Offloader - Cost-sensitive hierarchical-inference offloading

Closed-form rules for calibrated local models, the H2T2 online
two-threshold policy, comparison baselines and a replay benchmark.
"""

__version__ = "1.0.0"
