"""Conjugate-speckle ghost imaging toolkit.

Simulation of paired pseudo-thermal speckles, a dual-encoder reconstruction
network trained on them, classical correlation + phase-retrieval baselines,
and SSIM/PSNR evaluation reports.
"""

__version__ = "0.1.0"
