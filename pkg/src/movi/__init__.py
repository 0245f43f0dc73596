"""Desk-scale video object insertion with multi-view reference conditioning.

Subpackages and modules:
    synthworld   procedural data pipeline (meshes, rasterizer, clips, corruption)
    latentcodec  exactly invertible pixel <-> latent space-to-depth codec
    conditioning dual-path reference injection and quality-aware weighting
    backbone     miniature denoising transformer, diffusion loss, Euler sampler
    grounding    FPN feature aggregation with latent depth/contour heads
    temporal     Lucas-Kanade flow, bilinear warping, temporal loss
    trainer      training loop, checkpointing, ablation matrix
    evalmetrics  PSNR/SSIM/IoU/flicker metrics and report generation
    cli          single `movi` entry point
"""

__version__ = "0.1.0"
