"""moerl: mixture-of-experts actor-critic RL with dormant-ratio-gated
weight perturbation, plus toy environments and an analysis harness."""

__version__ = "0.1.0"
