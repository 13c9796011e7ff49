"""Semi-supervised GAN for pixel-wise crop/weed classification of
multispectral imagery, built on a small numpy autodiff core."""
from .errors import SSGANError

__version__ = "0.1.0"

__all__ = ["SSGANError", "__version__"]
