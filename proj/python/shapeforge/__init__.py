"""Python bindings for the shapeforge latent shape model."""

import torch  # noqa: F401  loads libtorch before the extension

from ._shapeforge import Error, Model, chamfer, make_dataset, train, view_ring

__all__ = ["Error", "Model", "chamfer", "make_dataset", "train", "view_ring"]
