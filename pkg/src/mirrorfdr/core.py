"""GLM families, datasets and selection outputs shared by every module.

Feature indices are 0-based in memory. Reports written by the CLI use
1-based indices and say so in their headers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import expit

FAMILIES = ("gaussian", "logistic", "poisson", "negative_binomial")
F_CHOICES = ("min2", "product", "sum")

_ALIASES = {"negbin": "negative_binomial", "nb": "negative_binomial", "binomial": "logistic"}

# ddot floor when the second derivative is used as an IRLS weight
WEIGHT_FLOOR = 1e-10


class MirrorFdrError(Exception):
    """Base class for failures raised by the selectors and estimators."""

    code = "error"


class DomainError(MirrorFdrError, ValueError):
    code = "domain_error"


class MleNonexistentError(MirrorFdrError):
    """The likelihood has no finite maximizer (e.g. separated classes)."""

    code = "mle_nonexistent"


class SingularHessianError(MirrorFdrError):
    code = "singular_hessian"


class ConvergenceError(MirrorFdrError):
    code = "non_convergence"


class InsufficientSamplesError(MirrorFdrError):
    code = "insufficient_samples"


class RankDeficientError(MirrorFdrError):
    code = "rank_deficient"


class TauNonpositiveError(MirrorFdrError):
    code = "tau_nonpositive"

    def __init__(self, feature: int, value: float):
        super().__init__(f"tau^2 for feature {feature} is {value:.3g} <= 0")
        self.feature = feature
        self.value = value


@dataclass(frozen=True)
class GlmFamily:
    """A GLM family described through its loss ``l(y, v) = -y v + rho(v)``.

    ``v`` is the linear predictor. Negative binomial uses the log link with
    a known ``dispersion`` r (number of successes), for which
    ``l(y, v) = -y v + (y + r) log(r + e^v)`` up to a constant in ``v``.
    """

    kind: str = "gaussian"
    dispersion: float | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "kind", kind)
        if kind == "negative_binomial":
            r = 2.0 if self.dispersion is None else float(self.dispersion)
            if not r > 0:
                raise ValueError("dispersion must be positive")
            object.__setattr__(self, "dispersion", r)
        elif self.dispersion is not None:
            object.__setattr__(self, "dispersion", None)

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    def check_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("response contains non-finite values")
        if self.kind == "logistic":
            if not np.all((y == 0) | (y == 1)):
                raise DomainError("logistic response must be binary {0, 1}")
        elif self.kind in ("poisson", "negative_binomial"):
            if np.any(y < 0) or np.any(y != np.floor(y)):
                raise DomainError(f"{self.kind} response must be nonnegative integers")
        return y

    def loss(self, y, v):
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian":
            return -y * v + 0.5 * v * v
        if self.kind == "logistic":
            return -y * v + np.logaddexp(0.0, v)
        if self.kind == "poisson":
            return -y * v + np.exp(v)
        r = self.dispersion
        return -y * v + (y + r) * np.logaddexp(np.log(r), v)

    def dot(self, y, v):
        """First derivative of the loss in ``v``."""
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian":
            return v - y
        if self.kind == "logistic":
            return expit(v) - y
        if self.kind == "poisson":
            return np.exp(v) - y
        r = self.dispersion
        return (y + r) * expit(v - np.log(r)) - y

    def ddot(self, y, v):
        """Second derivative of the loss in ``v`` (nonnegative)."""
        y = np.asarray(y, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian":
            return np.ones(np.broadcast(y, v).shape)
        if self.kind == "logistic":
            s = expit(v)
            return np.broadcast_to(s * (1.0 - s), np.broadcast(y, v).shape).copy()
        if self.kind == "poisson":
            return np.broadcast_to(np.exp(v), np.broadcast(y, v).shape).copy()
        r = self.dispersion
        s = expit(v - np.log(r))
        return (y + r) * s * (1.0 - s)

    def saturated_loss(self, y):
        """Pointwise minimum of the loss over ``v``; deviance is ``2 (l - l_sat)``."""
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            return -0.5 * y * y
        if self.kind == "logistic":
            return np.zeros_like(y)
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
        if self.kind == "poisson":
            return y - ylogy
        r = self.dispersion
        return -ylogy + (y + r) * np.log(r + y)

    def mean(self, v):
        """Inverse link: the response mean at linear predictor ``v``."""
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian":
            return v
        if self.kind == "logistic":
            return expit(v)
        return np.exp(v)

    def __str__(self):
        if self.kind == "negative_binomial":
            return f"negative_binomial(r={self.dispersion:g})"
        return self.kind


def loss_eval(family: GlmFamily, y: float, v: float) -> tuple[float, float, float]:
    """Return ``(l(y, v), l'(y, v), l''(y, v))`` for scalar inputs."""
    if not np.isfinite(v):
        raise DomainError("linear predictor must be finite")
    yy = family.check_response(np.atleast_1d(y))
    return (
        float(family.loss(yy, v)[0]),
        float(family.dot(yy, v)[0]),
        float(family.ddot(yy, v)[0]),
    )


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``X`` (rows are observations), response ``y`` and family."""

    X: np.ndarray
    y: np.ndarray
    family: GlmFamily = field(default_factory=GlmFamily)
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError("X must have at least one row and one column")
        y = self.family.check_response(np.array(self.y, dtype=float).ravel())
        if y.shape[0] != n:
            raise ValueError(f"X has {n} rows but y has length {y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise DomainError("design matrix contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != p:
                raise ValueError("feature_names length does not match the number of columns")
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.family, self.feature_names)

    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j + 1}" for j in range(self.p))


@dataclass(frozen=True)
class MirrorConfig:
    q: float = 0.1
    f_choice: str = "product"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0,1)")
        if self.f_choice not in F_CHOICES:
            raise ValueError(f"f_choice must be one of {F_CHOICES}")


@dataclass(frozen=True)
class MirrorResult:
    """Output of a selector.

    ``selected`` holds sorted 0-based indices. ``cutoff`` is None when no
    threshold achieves the target level; a cutoff of 0.0 stands for the
    limit ``t -> 0+`` and selects every positive statistic. For multiple
    data splitting ``mirror`` holds the inclusion rates.
    """

    mirror: np.ndarray
    cutoff: float | None
    selected: np.ndarray
    fdp_hat: float | None
    q: float = 0.1
    method: str = ""
    t1: np.ndarray | None = None
    t2: np.ndarray | None = None
    warnings: tuple[str, ...] = ()

    @property
    def n_selected(self) -> int:
        return int(self.selected.size)


def fdp_power(selected: Iterable[int], s1: Iterable[int], p1: int | None = None):
    """False discovery proportion and power of a selection.

    FDP is 0 for an empty selection. Power is None when there are no
    relevant features.
    """
    sel = set(int(j) for j in selected)
    truth = set(int(j) for j in s1)
    p1 = len(truth) if p1 is None else int(p1)
    fdp = len(sel - truth) / len(sel) if sel else 0.0
    power = len(sel & truth) / p1 if p1 > 0 else None
    return fdp, power
