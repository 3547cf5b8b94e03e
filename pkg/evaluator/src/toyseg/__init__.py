"""Reference wire-protocol evaluator: toy 3D segmentation training on synthetic blobs."""

from .net import SegNet, wiring_of
from .task import ToyTask, make_case
from .trainer import dice_from_masks, train, validate

__version__ = "0.1.0"
