"""This script contains the parameter update rules
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from tkf_autodiff.tensor import Tensor
from tkf_types.configs import OptimConfig
from tkf_types.enums import OptimAlgorithm


@dataclass
class OptimState:
    """ Per-parameter optimizer buffers """
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: Dict[str, Tensor], grads: Dict[str, Optional[np.ndarray]],
                   state: OptimState, cfg: OptimConfig) -> OptimState:
    """ Updates the parameters in place
    Arguments:
        params: the parameters by name
        grads: their gradients by name; missing or None gradients leave a parameter as is
        state: the optimizer buffers, updated in place
        cfg: the optimizer settings
    Return:
        Returns the state
    Notes:
        sgd_momentum: v <- mu v + g; p <- p - lr (v + wd p)
        adam: bias-corrected moments; the weight decay is decoupled from the moments
    """
    state.step += 1
    for name, one_param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        data = one_param.data

        if cfg.algorithm == OptimAlgorithm.SGD_MOMENTUM:
            velocity = state.first.get(name)
            velocity = grad.copy() if velocity is None else cfg.momentum * velocity + grad
            state.first[name] = velocity
            data -= cfg.lr * (velocity + cfg.weight_decay * data)
        else:
            first = state.first.get(name, np.zeros_like(data))
            second = state.second.get(name, np.zeros_like(data))
            first = cfg.beta1 * first + (1.0 - cfg.beta1) * grad
            second = cfg.beta2 * second + (1.0 - cfg.beta2) * grad * grad
            state.first[name], state.second[name] = first, second
            first_hat = first / (1.0 - cfg.beta1 ** state.step)
            second_hat = second / (1.0 - cfg.beta2 ** state.step)
            data -= cfg.lr * (first_hat / (np.sqrt(second_hat) + cfg.adam_eps) +
                              cfg.weight_decay * data)
    return state
