"""Weak-field homodyne Bell tests on vacuum-one-photon states.

Closed-form and brute-force Fock-space probabilities for Clauser-Horne
experiments with tunable local beamsplitters, plus optimisers over the
measurement settings.
"""

from .model import EventPattern, InputSpec, Setting

__version__ = "0.1.0"

__all__ = ["EventPattern", "InputSpec", "Setting", "__version__"]
