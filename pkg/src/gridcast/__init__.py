"""Probabilistic day-ahead net-load forecasting with diffusion scenario ensembles.

Subpackage map:

- ``data``: CSV ingestion, z-score normalization, weekly window arrangement,
  calendar/weather condition tokens.
- ``diffusion``: noise schedule and the exact forward/reverse denoising kernels.
- ``model``: 1-D UNet noise predictor with cross-attention conditioning and its
  trainer.
- ``checkpoint``: binary model persistence with schedule fingerprinting.
- ``sampler``: history-guided scenario generation (conditional/unconditional mix).
- ``multi``: joint load/RES/net-load generation with consistency guidance.
- ``kde``: per-timestep density estimation and mode-centered intervals.
- ``metrics``: MAPE/ACE/PIAW/Winkler scoring with seasonal aggregation.
- ``synth``: synthetic dataset generator for desk-scale experiments.
- ``cli``: end-to-end command line harness.
"""

__version__ = "0.1.0"
