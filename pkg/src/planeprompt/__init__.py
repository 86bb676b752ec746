"""Box-prompted plane instance segmentation on RGB-D data.

A dual-complexity encoder (transformer branch for the spectral bands, a
lightweight CNN branch for depth) feeds a three-mask decoder conditioned on
box prompts. Training is two-phase: segment-anything pretraining on
pseudo-labels, then plane-instance fine-tuning with a rebalanced focal+dice
loss. Evaluation uses the VOI / RI / SC partition metrics.
"""

__version__ = "0.1.0"
