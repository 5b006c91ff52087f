"""Core data types: datasets with partially observed outcomes, links, targets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, EstimandError

MISSING = np.nan  # outcome sentinel for unlabeled rows


class LinkKind(str, enum.Enum):
    IDENTITY = "identity"
    LOGIT = "logit"


def _softplus(u):
    u = np.asarray(u, dtype=float)
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


@dataclass(frozen=True)
class Link:
    """Inverse link psi with antiderivative Psi and derivative psi1."""

    kind: LinkKind = LinkKind.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))

    @classmethod
    def identity(cls) -> "Link":
        return cls(LinkKind.IDENTITY)

    @classmethod
    def logit(cls) -> "Link":
        return cls(LinkKind.LOGIT)

    def psi(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind is LinkKind.IDENTITY:
            return u.copy()
        return np.exp(u - _softplus(u))

    def Psi(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind is LinkKind.IDENTITY:
            return 0.5 * u * u
        return _softplus(u)

    def psi1(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind is LinkKind.IDENTITY:
            return np.ones_like(u)
        s = self.psi(u)
        return s * (1.0 - s)

    def inverse(self, mu):
        """psi^{-1}; used only to seed iterative solvers."""
        mu = np.asarray(mu, dtype=float)
        if self.kind is LinkKind.IDENTITY:
            return mu.copy()
        mu = np.clip(mu, 1e-12, 1 - 1e-12)
        return np.log(mu) - np.log1p(-mu)


class Estimand(str, enum.Enum):
    POPULATION = "population"
    UNLABELED = "unlabeled"
    STRATIFIED = "stratified"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Covariates with intercept column, outcomes (NaN where unlabeled), labels.

    Arrays are copied and made read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        r = np.array(self.r)
        if x.ndim != 2 or x.shape[1] < 1:
            raise DataError(f"x must be a 2-d matrix, got shape {x.shape}")
        n_rows = x.shape[0]
        if y.shape != (n_rows,) or r.shape != (n_rows,):
            raise DataError("x, y and r must have the same number of rows")
        if not np.all(np.isin(r, (0, 1))):
            raise DataError("r must be binary (0/1)")
        r = r.astype(np.int8)
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be finite")
        if not np.all(x[:, 0] == 1.0):
            raise DataError("first column of x must be identically 1")
        lab = r == 1
        if not np.all(np.isfinite(y[lab])):
            raise DataError("y must be finite on labeled rows")
        y = y.copy()
        y[~lab] = MISSING
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "r", _frozen(r))

    @classmethod
    def from_covariates(cls, covariates, y, r) -> "Dataset":
        """Build from a covariate block without the intercept column."""
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if covariates.shape[0] != len(r) and covariates.shape[1] == len(r):
            covariates = covariates.T
        x = np.column_stack([np.ones(covariates.shape[0]), covariates])
        return cls(x, y, r)

    @property
    def n_total(self) -> int:
        return int(self.x.shape[0])

    @property
    def n_labeled(self) -> int:
        return int(np.sum(self.r))

    @property
    def d(self) -> int:
        return int(self.x.shape[1] - 1)

    @property
    def labeled(self) -> np.ndarray:
        return self.r == 1

    def y_filled(self, fill: float = 0.0) -> np.ndarray:
        """Outcome vector with the missing sentinel replaced by ``fill``."""
        return np.where(self.labeled, self.y, fill)

    def require_both_groups(self) -> None:
        n, N = self.n_labeled, self.n_total
        if n == 0 or n == N:
            raise EstimandError(
                f"estimand needs labeled and unlabeled rows (n={n}, N={N})"
            )

    def subset(self, rows) -> "Dataset":
        return Dataset(self.x[rows], self.y[rows], self.r[rows])


@dataclass(frozen=True)
class TargetSpec:
    """Which covariates form Z (the intercept is always included) and the estimand."""

    z_columns: tuple[int, ...] = ()
    estimand: Estimand = Estimand.POPULATION
    link: Link = field(default_factory=Link)

    def __post_init__(self):
        cols = tuple(int(c) for c in self.z_columns)
        if len(set(cols)) != len(cols):
            raise ConfigurationError(f"duplicate z columns: {cols}")
        object.__setattr__(self, "z_columns", cols)
        object.__setattr__(self, "estimand", Estimand(self.estimand))

    @property
    def non_intercept(self) -> tuple[int, ...]:
        return tuple(c for c in self.z_columns if c != 0)

    @property
    def m(self) -> int:
        return 1 + len(self.non_intercept)


def extract_z(dataset: Dataset, spec: TargetSpec | Sequence[int]) -> np.ndarray:
    """Return Z = (1, X_{c1}, X_{c2}, ...) for the columns in ``spec``."""
    cols = spec.non_intercept if isinstance(spec, TargetSpec) else tuple(
        c for c in spec if c != 0
    )
    if len(set(cols)) != len(cols):
        raise ConfigurationError(f"duplicate z columns: {cols}")
    d = dataset.d
    for c in cols:
        if not 0 <= c <= d:
            raise ConfigurationError(f"z column {c} out of range [0, {d}]")
    return np.column_stack([np.ones(dataset.n_total)] + [dataset.x[:, c] for c in cols])
