"""Desk-scale autonomous-exploration workbench.

Subpackages cover the full pipeline: grid-world simulation, belief graphs,
the ground-truth coverage oracle, frontier baselines, the attention belief
encoder, the diffusion path policy, dataset/training utilities, and the
evaluation harness with its CLI.
"""

__version__ = "0.1.0"
