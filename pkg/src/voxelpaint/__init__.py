"""Desk-scale 3D brain MRI inpainting toolkit.

Synthesizes healthy-region training masks, voids the masked regions out of
T1-weighted scans, trains a 3D U-Net to fill them back in, and evaluates
the reconstruction on mask-restricted metrics.
"""

__version__ = "0.1.0"

from .autodiff import Tensor
from .volume import MaskVolume, Volume

__all__ = ["Tensor", "Volume", "MaskVolume", "__version__"]
