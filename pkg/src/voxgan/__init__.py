"""Volumetric GANs from scratch on numpy: 3D-GAN, 3D-VAE-GAN, discriminator
features, latent-space tools and voxel-prediction scoring."""

from .models import FULL, PROFILES, TINY, Discriminator, Generator, ImageEncoder, ScaleProfile, load_profile
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "FULL",
    "PROFILES",
    "TINY",
    "Discriminator",
    "Generator",
    "ImageEncoder",
    "ScaleProfile",
    "Tensor",
    "load_profile",
    "no_grad",
]
