"""Hinge-function bases for the propensity (F) and outcome (G) models."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .model import Dataset


class KnotPlacement(str, enum.Enum):
    FIXED_RANGE = "fixed"  # k interior points of (-a, a)
    DATA_RANGE = "data"  # k points spanning [min, max] of each covariate


@dataclass(frozen=True)
class BasisSpec:
    knots_per_covariate: int = 49
    placement: KnotPlacement = KnotPlacement.FIXED_RANGE
    half_width: float = 3.0
    covariate_indices: tuple[int, ...] | None = None  # None: every covariate

    def __post_init__(self):
        object.__setattr__(self, "placement", KnotPlacement(self.placement))
        if self.knots_per_covariate < 1:
            raise ConfigurationError("knots_per_covariate must be >= 1")
        if self.placement is KnotPlacement.FIXED_RANGE and not self.half_width > 0:
            raise ConfigurationError("half_width must be positive")
        if self.covariate_indices is not None:
            object.__setattr__(
                self, "covariate_indices", tuple(int(i) for i in self.covariate_indices)
            )

    def knots(self, column: np.ndarray) -> np.ndarray:
        k = self.knots_per_covariate
        if self.placement is KnotPlacement.FIXED_RANGE:
            a = self.half_width
            return np.linspace(-a, a, k + 2)[1:-1]
        return np.linspace(column.min(), column.max(), k)


@dataclass(frozen=True)
class DesignMatrices:
    f: np.ndarray
    g: np.ndarray

    @property
    def p(self) -> int:
        return self.f.shape[1] - 1

    @property
    def q(self) -> int:
        return self.g.shape[1] - 1


def hinge_columns(column: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Matrix with entries (column_i - knot_j)_+."""
    column = np.asarray(column, dtype=float)
    return np.maximum(column[:, None] - np.asarray(knots, dtype=float)[None, :], 0.0)


def build_ps_basis(dataset: Dataset | np.ndarray, spec: BasisSpec) -> np.ndarray:
    """F = [1, (X_1 - xi_11)_+, ..., (X_d - xi_dk)_+] for the selected covariates."""
    x = dataset.x if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite covariates")
    d = x.shape[1] - 1
    idx = spec.covariate_indices or tuple(range(1, d + 1))
    for i in idx:
        if not 1 <= i <= d:
            raise ConfigurationError(f"covariate index {i} out of range [1, {d}]")
    blocks = [np.ones((x.shape[0], 1))]
    for i in idx:
        blocks.append(hinge_columns(x[:, i], spec.knots(x[:, i])))
    return np.ascontiguousarray(np.hstack(blocks))


def build_or_basis(f: np.ndarray, z: np.ndarray) -> np.ndarray:
    """G = [F, Z_- (x) F_-] with intercepts dropped from both interaction factors."""
    f = np.asarray(f, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if f.shape[0] != z.shape[0]:
        raise ConfigurationError(
            f"row mismatch between F ({f.shape[0]}) and Z ({z.shape[0]})"
        )
    z_rest = z[:, 1:]
    if z_rest.shape[1] == 0:
        return np.ascontiguousarray(f)
    f_rest = f[:, 1:]
    inter = (z_rest[:, :, None] * f_rest[:, None, :]).reshape(f.shape[0], -1)
    return np.ascontiguousarray(np.hstack([f, inter]))


def build_design(dataset: Dataset, z: np.ndarray, spec: BasisSpec,
                 interactions: bool = True) -> DesignMatrices:
    f = build_ps_basis(dataset, spec)
    g = build_or_basis(f, z) if interactions else f
    return DesignMatrices(f=f, g=g)


def or_basis_width(p: int, m: int) -> int:
    """Column count (q + 1) of G for p non-intercept PS columns and dim(Z) = m."""
    return (p + 1) + (m - 1) * p


def select_columns(f: np.ndarray, covariates: Sequence[int], k: int) -> np.ndarray:
    """Sub-basis of F keeping the intercept and the hinge blocks of ``covariates``.

    ``covariates`` are 1-based positions among the expanded covariates.
    """
    cols = [0]
    for c in covariates:
        start = 1 + (c - 1) * k
        cols.extend(range(start, start + k))
    return np.ascontiguousarray(f[:, cols])
