"""Plaintext logistic-regression numerics.

Everything here is privacy-free: the math each node runs on its own rows, and
the ground truth the secure protocols are checked against.  The log-likelihood
is the l2-regularised objective

    l2(beta) = sum_i [y_i * x_i.beta - log(1 + exp(x_i.beta))] - lambda/2 * |beta|^2

and both optimisers maximise it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class LogitError(Exception):
    """Base class for numerical-core errors."""


class DimensionError(LogitError, ValueError):
    pass


class NotPositiveDefinite(LogitError):
    pass


class SingularMatrix(LogitError):
    pass


class Diverged(LogitError):
    """Raised when Newton's method hits a non positive-definite Hessian or blows up."""


class ConfigurationError(LogitError, ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64)).reshape(-1)
        if x.ndim != 2:
            raise DimensionError(f"x must be 2-D, got shape {x.shape}")
        n, p = x.shape
        if n < 1 or p < 1:
            raise DimensionError(f"dataset must have n >= 1 and p >= 1, got {x.shape}")
        if y.shape[0] != n:
            raise DimensionError(f"y has {y.shape[0]} entries for {n} rows")
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite entries")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("y entries must be 0 or 1")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class ModelConfig:
    lam: float = 0.0
    tol: float = 1e-6
    max_iter: int = 500
    beta0: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if not self.tol > 0:
            raise ConfigurationError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")

    def initial_beta(self, p: int) -> np.ndarray:
        if self.beta0 is None:
            return np.zeros(p)
        beta = np.asarray(self.beta0, dtype=np.float64).reshape(-1).copy()
        if beta.shape[0] != p:
            raise DimensionError(f"beta0 has {beta.shape[0]} entries, dataset has {p} columns")
        return beta

    @staticmethod
    def random_beta0(p: int, seed: int, scale: float = 0.1) -> np.ndarray:
        """A small random starting point, for callers that want the randomised init."""
        return np.random.default_rng(seed).normal(0.0, scale, size=p)


@dataclass
class FitResult:
    beta: np.ndarray
    iterations: int
    converged: bool
    likelihood_trace: list = field(default_factory=list)
    beta_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class SpectralBounds:
    big_m: float
    small_m: float

    @property
    def rate(self) -> float:
        """Contraction factor 1 - m/M of the optimality gap."""
        return 1.0 - self.small_m / self.big_m


def _check_beta(data: Dataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != data.p:
        raise DimensionError(f"beta has {beta.shape[0]} entries, dataset has {data.p} columns")
    return beta


def sigmoid(z):
    """Logistic function, stable for large |z| (scalar or array)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def log_likelihood(data: Dataset, beta, lam: float = 0.0) -> float:
    beta = _check_beta(data, beta)
    z = data.x @ beta
    # log(1 + e^z) without overflow
    softplus = np.logaddexp(0.0, z)
    return float(np.sum(data.y * z - softplus) - 0.5 * lam * float(beta @ beta))


def gradient(data: Dataset, beta, lam: float = 0.0) -> np.ndarray:
    beta = _check_beta(data, beta)
    prob = sigmoid(data.x @ beta)
    return data.x.T @ (data.y - prob) - lam * beta


def hessian(data: Dataset, beta, lam: float = 0.0) -> np.ndarray:
    beta = _check_beta(data, beta)
    prob = sigmoid(data.x @ beta)
    a = prob * (1.0 - prob)
    return -(data.x.T * a) @ data.x - lam * np.eye(data.p)


def approx_hessian(data: Dataset, lam: float = 0.0) -> np.ndarray:
    """The beta-independent curvature bound -X'X/4 - lambda*I."""
    return -0.25 * (data.x.T @ data.x) - lam * np.eye(data.p)


def cholesky(a) -> np.ndarray:
    """Textbook Cholesky factor of a symmetric positive-definite matrix.

    Raises NotPositiveDefinite when a pivot drops below 1e-12 times the largest
    diagonal entry.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got {a.shape}")
    p = a.shape[0]
    floor = 1e-12 * max(float(np.max(np.abs(np.diag(a)))), 0.0)
    l = np.zeros_like(a)
    for j in range(p):
        pivot = a[j, j] - l[j, :j] @ l[j, :j]
        if not pivot > floor:
            raise NotPositiveDefinite(f"pivot {j} is {pivot:.3e}; matrix is not positive definite")
        l[j, j] = math.sqrt(pivot)
        for i in range(j + 1, p):
            l[i, j] = (a[i, j] - l[i, :j] @ l[j, :j]) / l[j, j]
    return l


def solve_via_cholesky(l, g) -> np.ndarray:
    """Solve (L L') x = g by forward then backward substitution."""
    l = np.asarray(l, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    p = l.shape[0]
    if l.shape != (p, p) or g.shape[0] != p:
        raise DimensionError(f"shape mismatch: L {l.shape}, g {g.shape}")
    if np.any(np.diag(l) == 0.0):
        raise SingularMatrix("zero on the diagonal of the Cholesky factor")
    z = np.zeros(p)
    for i in range(p):
        z[i] = (g[i] - l[i, :i] @ z[:i]) / l[i, i]
    x = np.zeros(p)
    for i in reversed(range(p)):
        x[i] = (z[i] - l[i + 1:, i] @ x[i + 1:]) / l[i, i]
    return x


def converged(l_prev: float, l_curr: float, tol: float) -> bool:
    """Relative change of the log-likelihood is strictly below tol.

    l_prev == 0 only happens for a perfect fit; it counts as converged iff
    l_curr is also exactly 0.
    """
    if l_prev == 0.0:
        return l_curr == 0.0
    return abs(l_curr - l_prev) / abs(l_prev) < tol


def newton_fit(data: Dataset, cfg: ModelConfig = ModelConfig()) -> FitResult:
    """Pure Newton iterations, refactoring the exact Hessian every step."""
    beta = cfg.initial_beta(data.p)
    l_curr = log_likelihood(data, beta, cfg.lam)
    result = FitResult(beta=beta, iterations=0, converged=False,
                       likelihood_trace=[l_curr], beta_trace=[beta.copy()])
    for _ in range(int(cfg.max_iter)):
        g = gradient(data, beta, cfg.lam)
        try:
            l_fac = cholesky(-hessian(data, beta, cfg.lam))
        except NotPositiveDefinite as exc:
            raise Diverged(f"Newton step {result.iterations}: {exc}") from exc
        beta = beta + solve_via_cholesky(l_fac, g)
        if not np.all(np.isfinite(beta)):
            raise Diverged(f"Newton step {result.iterations} produced non-finite coefficients")
        l_prev, l_curr = l_curr, log_likelihood(data, beta, cfg.lam)
        result.iterations += 1
        result.likelihood_trace.append(l_curr)
        result.beta_trace.append(beta.copy())
        result.beta = beta
        if converged(l_prev, l_curr, cfg.tol):
            result.converged = True
            break
    return result


def privlogit_fit(data: Dataset, cfg: ModelConfig = ModelConfig()) -> FitResult:
    """Constant-Hessian Newton: factor -H~ once, then reuse it every step."""
    beta = cfg.initial_beta(data.p)
    try:
        l_fac = cholesky(-approx_hessian(data, cfg.lam))
    except NotPositiveDefinite as exc:
        raise ConfigurationError(
            f"approximate Hessian is singular ({exc}); use lambda > 0 or full-rank covariates") from exc
    l_curr = log_likelihood(data, beta, cfg.lam)
    result = FitResult(beta=beta, iterations=0, converged=False,
                       likelihood_trace=[l_curr], beta_trace=[beta.copy()])
    for _ in range(int(cfg.max_iter)):
        # beta - H~^{-1} g  ==  beta + (-H~)^{-1} g
        beta = beta + solve_via_cholesky(l_fac, gradient(data, beta, cfg.lam))
        l_prev, l_curr = l_curr, log_likelihood(data, beta, cfg.lam)
        result.iterations += 1
        result.likelihood_trace.append(l_curr)
        result.beta_trace.append(beta.copy())
        result.beta = beta
        if converged(l_prev, l_curr, cfg.tol):
            result.converged = True
            break
    return result


def spectral_bounds(data: Dataset, lam: float = 0.0, betas=None) -> SpectralBounds:
    """Curvature bounds M = eig_max(X'X)/4 + lambda and m = eig_min(X'AX) + lambda.

    m is taken as the minimum over the supplied coefficient vectors (typically a
    PrivLogit trajectory) and the Newton optimum.  When betas is None only the
    optimum is used.
    """
    xtx = data.x.T @ data.x
    big_m = 0.25 * float(np.linalg.eigvalsh(xtx)[-1]) + lam
    points = [] if betas is None else [np.asarray(b, dtype=np.float64) for b in betas]
    try:
        points.append(newton_fit(data, ModelConfig(lam=lam, tol=1e-12, max_iter=100)).beta)
    except Diverged:
        if not points:
            raise
    small = min(float(np.linalg.eigvalsh(-hessian(data, b, 0.0))[0]) for b in points)
    return SpectralBounds(big_m=big_m, small_m=small + lam)
