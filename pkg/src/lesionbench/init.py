"""He-style weight initialization."""

from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError


def fan_in_of(shape: Sequence[int]) -> int:
    """Input width of a linear (m,n) or conv (O,C,k,k) weight shape."""
    if len(shape) == 2:
        return int(shape[1])
    if len(shape) == 4:
        return int(shape[1] * shape[2] * shape[3])
    raise ConfigError(f"no fan-in rule for weight shape {tuple(shape)}")


def kaiming_init(shape: Sequence[int], seed: Optional[int] = None, *,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Zero-mean normal samples with std sqrt(2 / fan_in), deterministic per seed."""
    fan_in = fan_in_of(shape)
    if fan_in < 1:
        raise ConfigError(f"fan_in must be >= 1, got {fan_in} for shape {tuple(shape)}")
    if rng is None:
        if seed is None:
            raise ConfigError("kaiming_init needs a seed or an rng")
        rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / fan_in)
    return rng.standard_normal(tuple(shape)) * std
