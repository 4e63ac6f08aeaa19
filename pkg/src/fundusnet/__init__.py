"""Simultaneous segmentation of retinal vessels, optic disc and fovea."""

from .network import CLASS_NAMES, Cnn, CnnGeometry
from .training import Hyperparams, train_select

__all__ = ["CLASS_NAMES", "Cnn", "CnnGeometry", "Hyperparams", "train_select"]
