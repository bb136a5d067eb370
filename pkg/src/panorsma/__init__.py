"""Desk-scale simulator for multi-user panoramic streaming over a shared downlink.

Building blocks: a fading channel model, rate mathematics for rate-splitting
and its NOMA/OFDMA baselines, viewport-to-feature-grid weight maps,
spherically weighted quality metrics, a reconstruction-quality surrogate,
per-slot service scoring, a slot-level decision environment, and a recurrent
policy-gradient optimizer."""

__version__ = "0.1.0"
