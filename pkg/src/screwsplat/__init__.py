"""ScrewSplat: articulated objects as screw-aware Gaussian splats."""

__version__ = "1.0.0"
