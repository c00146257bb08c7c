"""This script contains the finite-difference gradient verifier
"""

from dataclasses import dataclass, field
import logging
from typing import Callable, Dict, Optional, Union

import numpy as np

from tokfuse_errors import NumericalError
from .tensor import Tape, Tensor, backward, no_tape

# Denominator floor of the relative error
DEFAULT_MIN_SCALE = 1e-12

# Most coordinates sampled from a single tensor
DEFAULT_MAX_COORDS = 100


@dataclass
class GradCheckEntry:
    """ The comparison at one sampled coordinate """
    name: str
    coordinate: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    """ Outcome of a gradient check """
    max_rel_err: float
    worst_coordinate: Optional[tuple]
    passed: bool
    entries: list = field(default_factory=list)

    def group_errors(self, depth: int=1) -> Dict[str, float]:
        """ Returns the largest relative error per parameter group
        Arguments:
            depth: how many leading components of the dotted names make up a group
        Return:
            Returns a dictionary of group name to maximum relative error, in first-seen order
        """
        groups = {}
        for one_entry in self.entries:
            group = '.'.join(one_entry.name.split('.')[:depth])
            groups[group] = max(groups.get(group, 0.0), one_entry.rel_err)
        return groups


def relative_error(analytic: float, numeric: float, min_scale: float=DEFAULT_MIN_SCALE) -> float:
    """ Returns |a - n| / max(|a|, |n|, min_scale) """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), min_scale)


def _sample_counts(params: Dict[str, Tensor], max_coords: int,
                   max_total_coords: Optional[int]) -> Dict[str, int]:
    """ Decides how many coordinates to sample per tensor. Every tensor gets at least one and
        the remaining budget is shared evenly
    """
    counts = {name: min(one.size, max_coords) for name, one in params.items()}
    if max_total_coords is None or sum(counts.values()) <= max_total_coords:
        return counts

    share = max(1, max_total_coords // max(len(counts), 1))
    return {name: min(count, share) for name, count in counts.items()}


def _evaluate(f: Callable, params: Dict[str, Tensor]) -> float:
    """ Evaluates the scalar function without recording """
    with no_tape():
        value = f(params)
    value = float(value.item() if isinstance(value, Tensor) else value)
    if not np.isfinite(value):
        raise NumericalError(f'Non-finite function value during gradient check: {value}')
    return value


def finite_diff_check(f: Callable, params: Union[Dict[str, Tensor], Tensor], eps: float=1e-5,
                      tol: float=1e-5, max_coords: int=DEFAULT_MAX_COORDS, seed: int=0,
                      min_scale: float=DEFAULT_MIN_SCALE, max_total_coords: Optional[int]=None,
                      logger: logging.Logger=None, verbose: bool=False) -> GradCheckReport:
    """ Compares reverse-mode gradients against central differences at randomly sampled
        coordinates
    Arguments:
        f: function of the parameters returning a scalar Tensor; must be deterministic
        params: the named tensors to check (a single tensor is named 'x')
        eps: perturbation size
        tol: pass threshold on the largest relative error
        max_coords: most coordinates sampled per tensor
        seed: seeds the coordinate sampling
        min_scale: floor of the relative error's denominator
        max_total_coords: optional cap on the total sampled coordinates
        logger: optional logger
        verbose: log every sampled coordinate when True
    Return:
        Returns the GradCheckReport
    Raises:
        ValueError: if eps isn't positive
        NumericalError: if f isn't finite at a perturbed point
    Notes:
        The tensors are perturbed in place and restored afterwards. Tensors that should be
        checked have requires_grad turned on for the duration of the check
    """
    if eps <= 0:
        raise ValueError(f'finite_diff_check eps must be positive, got {eps}')
    if isinstance(params, Tensor):
        params = {'x': params}
    if logger is None:
        logger = logging.getLogger(__name__)

    for name, one_param in params.items():
        if one_param.dtype != np.float64:
            logger.warning('Gradient check of %s runs in %s; float64 is expected', name,
                           one_param.dtype)

    # Analytic pass
    previous_flags = {name: one.requires_grad for name, one in params.items()}
    previous_grads = {name: one.grad for name, one in params.items()}
    try:
        for one_param in params.values():
            one_param.requires_grad = True
            one_param.grad = None
        with Tape() as tape:
            loss = f(params)
        if not np.isfinite(loss.item()):
            raise NumericalError(f'Non-finite function value during gradient check: {loss.item()}')
        backward(loss, tape)
        analytic = {name: (one.grad if one.grad is not None else np.zeros_like(one.data))
                    for name, one in params.items()}
    finally:
        for name, one_param in params.items():
            one_param.requires_grad = previous_flags[name]
            one_param.grad = previous_grads[name]

    rng = np.random.default_rng(seed)
    entries = []
    for name, count in _sample_counts(params, max_coords, max_total_coords).items():
        one_param = params[name]
        flat_indices = rng.choice(one_param.size, size=count, replace=False)
        for one_flat in sorted(int(one) for one in flat_indices):
            coordinate = np.unravel_index(one_flat, one_param.shape)
            original = one_param.data[coordinate]
            try:
                one_param.data[coordinate] = original + eps
                plus = _evaluate(f, params)
                one_param.data[coordinate] = original - eps
                minus = _evaluate(f, params)
            finally:
                one_param.data[coordinate] = original

            numeric = (plus - minus) / (2.0 * eps)
            analytic_value = float(analytic[name][coordinate])
            entry = GradCheckEntry(name=name, coordinate=tuple(int(one) for one in coordinate),
                                   analytic=analytic_value, numeric=numeric,
                                   rel_err=relative_error(analytic_value, numeric, min_scale))
            entries.append(entry)
            if verbose:
                logger.info('%s%s analytic=%.6e numeric=%.6e rel_err=%.3e', name,
                            entry.coordinate, entry.analytic, entry.numeric, entry.rel_err)

    worst = max(entries, key=lambda one: one.rel_err) if entries else None
    max_rel_err = worst.rel_err if worst is not None else 0.0
    return GradCheckReport(max_rel_err=max_rel_err,
                           worst_coordinate=(worst.name, worst.coordinate) if worst else None,
                           passed=max_rel_err < tol,
                           entries=entries)
