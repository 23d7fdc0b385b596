"""Desk-scale adversarial training laboratory.

Trains encoder-decoder generators against a critic (no reconstruction
penalty) and measures when the result behaves like an autoencoder and
when it performs texture translation, on synthetic shape datasets with
ground-truth oracles.
"""

__version__ = "0.1.0"
