"""Wayside railway monitoring toolkit.

Synthetic strain/accelerometer passages with seeded wheel defects, axle
semantics from peak detection, VAE signal embeddings, a boosted-tree decision
layer and domain-incremental experience replay.
"""

__version__ = "0.1.0"
