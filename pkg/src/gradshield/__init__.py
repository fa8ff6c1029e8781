"""Desk-scale laboratory for perturbation-based model-stealing defenses.

The package bundles an exact budgeted posterior-steering solver, a small
reverse-mode differentiation engine with second-order support, deployable
defenses built on surrogate networks, an extraction-attack simulator on
synthetic tasks, and the evaluation metrics plus a configuration-driven CLI
that tie them together.
"""

__version__ = "0.1.0"
