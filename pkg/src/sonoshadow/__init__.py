"""Self-supervised acoustic shadow detection for convex-probe ultrasound images.

Trains an autoencoder with one encoder and two decoder heads (shadow and
content) purely on unlabeled images: random fan-shaped synthetic shadows are
multiplied into each training image and the shadow head learns to predict
them, which makes it pick up real shadows at inference time.
"""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1

from .autodiff import Tensor  # noqa: E402,F401
