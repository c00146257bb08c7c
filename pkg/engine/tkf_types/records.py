"""This script contains the record types passed between modules
"""

from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from tkf_autodiff.tensor import Tensor

@dataclass
class Sample:
    """ One labelled H x W x C unsigned-byte raster """
    image: np.ndarray
    label: int

@dataclass
class PatchGrid:
    """ How tokens map onto a spatial grid; a pixel grid has patch_size 1 """
    patch_size: int
    grid_h: int
    grid_w: int

    @property
    def num_tokens(self) -> int:
        """ Returns the number of spatial tokens """
        return self.grid_h * self.grid_w

@dataclass
class TokenSequence:
    """ [B, N, D] tokens plus their grid. A class token, when present, is token 0 """
    tokens: Tensor
    grid: PatchGrid
    has_class_token: bool = False

    def __post_init__(self):
        """ Checks the token count against the grid """
        expected = self.grid.num_tokens + (1 if self.has_class_token else 0)
        if self.tokens.ndim != 3 or self.tokens.shape[1] != expected:
            raise ValueError(f'Token tensor {self.tokens.shape} does not hold {expected} tokens '
                             f'for a {self.grid.grid_h}x{self.grid.grid_w} grid')

    @property
    def dim(self) -> int:
        """ Returns the token width """
        return self.tokens.shape[2]

@dataclass
class StageFeatureMaps:
    """ The backbone's stage outputs in stride order (strides 2, 4, 8, 16, 32) """
    maps: List[Tensor]

    def __getitem__(self, stage: int) -> Tensor:
        """ Returns the map of a 1-based stage """
        if not 1 <= stage <= len(self.maps):
            raise IndexError(f'Stage {stage} is not available; have 1..{len(self.maps)}')
        return self.maps[stage - 1]

    def __len__(self) -> int:
        """ Returns the number of maps """
        return len(self.maps)

@dataclass
class EpochMetrics:
    """ One epoch of training, as written to metrics.jsonl """
    epoch: int
    train_loss: float
    train_acc1: float
    val_loss: float
    val_acc1: float
    val_acc5: float
    wall_ms: float

    def to_dict(self) -> dict:
        """ Returns the metrics as a dictionary """
        return asdict(self)
