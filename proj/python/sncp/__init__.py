"""Sparse nonnegative CP tensor decomposition.

Tensors are numpy arrays of order >= 3; factor matrices are 2-D arrays with
one column per component. Modes are numbered from 0.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from ._core import (
    DEFAULT_SPARSITY_THRESHOLD,
    METHODS,
    PSNR_CAP_DB,
    ConfigError,
    DataError,
    DecompositionResult,
    IllConditionedError,
    ShapeError,
    SncpError,
    SolverConfig,
    count_nonzero_components,
    generate_sparse_signals,
    init_factors,
    kruskal_to_dense,
    mttkrp,
    ncp_objective,
    nnls_active_set,
    nnls_bpp,
    nonzero_component_indices,
    objective,
    preset_names,
    psnr,
    read_dnt,
    run_cli,
    sparsity_level,
    synthetic,
    write_dnt,
)
from ._core import decompose as _decompose

__all__ = [
    "DEFAULT_SPARSITY_THRESHOLD",
    "METHODS",
    "PSNR_CAP_DB",
    "ConfigError",
    "DataError",
    "DecompositionResult",
    "IllConditionedError",
    "ShapeError",
    "SncpError",
    "SolverConfig",
    "config",
    "count_nonzero_components",
    "decompose",
    "generate_sparse_signals",
    "init_factors",
    "kruskal_to_dense",
    "mttkrp",
    "ncp_objective",
    "nnls_active_set",
    "nnls_bpp",
    "nonzero_component_indices",
    "objective",
    "preset_names",
    "psnr",
    "read_dnt",
    "run_cli",
    "sparsity_level",
    "synthetic",
    "write_dnt",
]


def _as_list(v: float | Sequence[float]) -> list[float]:
    return [float(v)] if np.isscalar(v) else [float(x) for x in v]


def config(**fields: Any) -> SolverConfig:
    """SolverConfig with the given fields set; alpha and beta accept scalars."""
    cfg = SolverConfig()
    for name, value in fields.items():
        if not hasattr(cfg, name):
            raise TypeError(f"unknown solver option '{name}'")
        if name in ("alpha", "beta"):
            value = _as_list(value)
        setattr(cfg, name, value)
    return cfg


def decompose(
    x: np.ndarray,
    rank: int = 10,
    method: str = "anls-bpp",
    *,
    initial: Sequence[np.ndarray] | None = None,
    callback: Callable[[dict], bool] | None = None,
    **fields: Any,
) -> DecompositionResult:
    """Decompose `x` with the given method; extra keywords are SolverConfig fields.

    `callback` receives each trace row as a dict and may return False to stop.
    """
    cfg = config(rank=rank, method=method, **fields)
    return _decompose(np.asarray(x, dtype=float), cfg, None if initial is None else list(initial), callback)
