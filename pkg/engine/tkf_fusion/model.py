"""This script contains model building, the executable fusion model and parameter accounting
"""

import dataclasses
from dataclasses import dataclass, field
import logging
from typing import Dict, Union

import numpy as np

from tkf_autodiff.tensor import Tensor
from tkf_layers.encoder import BlockCounter
from tkf_layers.init import ParamInit, ParamTree, count_tensor_params, flatten_params, \
                            set_requires_grad
from tkf_types.configs import ModelConfig
from tkf_types.enums import FusionMethod
import tokfuse_config as tcfg
from .early import build_early_params, early_fusion_forward
from .late import build_late_params, late_fusion_forward
from .layer_by_layer import build_lbl_params, layer_by_layer_forward

# Builders and forward functions by fusion method
_METHODS = {
    FusionMethod.LATE_PARALLEL: (build_late_params, late_fusion_forward),
    FusionMethod.EARLY_FUSION: (build_early_params, early_fusion_forward),
    FusionMethod.LAYER_BY_LAYER: (build_lbl_params, layer_by_layer_forward),
}


@dataclass
class ParamReport:
    """ Parameter counts of a model """
    total: int
    per_module: Dict[str, int] = field(default_factory=dict)

    @property
    def total_millions(self) -> str:
        """ Returns the total in millions with one decimal """
        return f'{self.total / 1e6:.1f}'


class FusionModel:
    """ An executable fusion model: its configuration, its parameter tree and the forward
        function of its method
    """

    def __init__(self, config: ModelConfig, params: ParamTree):
        """ Initialize an instance
        Arguments:
            config: the validated model configuration
            params: the allocated parameter tree
        """
        self.config = config
        self.params = params
        self.counter = BlockCounter()
        self._forward = _METHODS[config.fusion_method][1]

    @property
    def dtype(self) -> np.dtype:
        """ Returns the compute data type """
        return np.dtype(self.config.dtype)

    def forward(self, images: Union[Tensor, np.ndarray]) -> Tensor:
        """ Computes class logits
        Arguments:
            images: [B, 3, H, W] normalized images
        Return:
            Returns the [B, K] logits
        """
        if not isinstance(images, Tensor) or images.dtype != self.dtype:
            images = Tensor(images.data if isinstance(images, Tensor) else images,
                            dtype=self.dtype)
        return self._forward(images, self.params, self.config, self.counter)

    __call__ = forward

    def parameters(self) -> Dict[str, Tensor]:
        """ Returns every parameter keyed by dotted name """
        return flatten_params(self.params)

    def trainable_parameters(self) -> Dict[str, Tensor]:
        """ Returns the parameters that receive gradients """
        return {name: one for name, one in self.parameters().items() if one.requires_grad}

    def zero_grad(self) -> None:
        """ Clears every parameter gradient """
        for one_param in self.parameters().values():
            one_param.zero_grad()


def build_model(cfg: ModelConfig, seed: int=0, materialize: bool=True,
                logger: logging.Logger=None) -> FusionModel:
    """ Validates the configuration and allocates a model
    Arguments:
        cfg: the model configuration; an unresolved backbone preset is filled in
        seed: seeds parameter initialization
        materialize: when False the parameters only carry shapes, for reporting
        logger: optional logger
    Return:
        Returns the FusionModel
    Raises:
        ConfigError: for an invalid configuration or block budget violation
    """
    if logger is None:
        logger = logging.getLogger(__name__)
    cfg = dataclasses.replace(cfg, backbone=tcfg.resolve_backbone(cfg.backbone))
    tcfg.validate_model_config(cfg)

    init = ParamInit(seed=seed, init_std=cfg.init_std, dtype=cfg.dtype, materialize=materialize,
                     zero_residual_outputs=cfg.identity_init)
    params = _METHODS[cfg.fusion_method][0](cfg, init)
    if cfg.freeze_backbone:
        set_requires_grad(params['backbone'], False)

    model = FusionModel(cfg, params)
    logger.debug('Built %s model with %s parameters', cfg.fusion_method.value,
                 f'{count_tensor_params(params):,}')
    return model


def count_params(model: FusionModel) -> ParamReport:
    """ Counts the parameters of a model by top-level module
    Arguments:
        model: the built model
    Return:
        Returns the ParamReport
    """
    per_module = {}
    for name, one_value in model.params.items():
        per_module[name] = count_tensor_params({name: one_value})
    return ParamReport(total=sum(per_module.values()), per_module=per_module)
