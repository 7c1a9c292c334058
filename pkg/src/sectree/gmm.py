"""Dimensionality reduction and diagonal-covariance Gaussian mixtures.

The reducer is a principal-component projection of unit-normalized vectors
(equivalent to working under cosine geometry). The mixture is fitted by EM
for every component count up to a cap and the count with the lowest BIC wins.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------

class Reducer(Protocol):
    def __call__(self, vectors: np.ndarray, reduced_dim: int, seed: int = 0) -> np.ndarray: ...


def pca_reduce(vectors: np.ndarray, reduced_dim: int, seed: int = 0) -> np.ndarray:
    """Project rows onto their leading principal axes.

    Rows are unit-normalized first. Only axes whose variance is at least the
    mean non-zero variance are kept; the output is zero-padded to
    ``reduced_dim`` columns. Fewer than two rows, or rows already at or
    below ``reduced_dim`` dimensions, pass through unchanged. Identical rows all
    map to the origin. Axis signs are fixed (largest loading positive) so the
    output is deterministic; ``seed`` is accepted for interface parity with
    stochastic reducers.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    n, d = x.shape
    if n < 2 or d <= reduced_dim:
        return x.copy()
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    x = x / norms
    centered = x - x.mean(axis=0)
    if not np.any(np.abs(centered) > 1e-12):
        logger.warning("all %d vectors are identical; mapping to the origin", n)
        return np.zeros((n, reduced_dim))
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    eig = s**2
    nonzero = eig[eig > 1e-12 * eig[0]]
    # Kaiser rule: axes below the mean variance are noise (sparse features put
    # a few points far out on them and the mixture overfits those)
    informative = max(1, int((eig >= nonzero.mean()).sum()))
    keep = min(reduced_dim, informative)
    axes = vt[:keep]
    pivots = np.argmax(np.abs(axes), axis=1)
    signs = np.sign(axes[np.arange(keep), pivots])
    signs[signs == 0] = 1.0
    axes = axes * signs[:, None]
    out = centered @ axes.T
    if keep < reduced_dim:
        out = np.hstack([out, np.zeros((n, reduced_dim - keep))])
    return out


def reduce_dims(vectors, reduced_dim: int = 10, seed: int = 0, reducer: Reducer | None = None) -> np.ndarray:
    return (reducer or pca_reduce)(np.asarray(vectors, dtype=np.float64), reduced_dim, seed)


def drop_constant_columns(x: np.ndarray) -> np.ndarray:
    """Remove zero-variance columns; they add parameters but no evidence."""
    if x.shape[0] < 2:
        return x
    keep = np.ptp(x, axis=0) > 1e-12
    if not keep.any():
        return x[:, :1] * 0.0
    return x[:, keep]


# ---------------------------------------------------------------------------
# mixture model
# ---------------------------------------------------------------------------

@dataclass
class GmmModel:
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d) diagonal covariances
    weights: np.ndarray  # (k,)
    log_likelihood_trace: list[float] = field(default_factory=list)
    bic: float = float("nan")
    converged: bool = False

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1] if self.log_likelihood_trace else float("nan")

    def n_parameters(self) -> int:
        k, d = self.means.shape
        return 2 * k * d + (k - 1)

    def _weighted_log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        diff = x[:, None, :] - self.means[None, :, :]
        log_det = np.log(self.variances).sum(axis=1)
        maha = (diff**2 / self.variances[None, :, :]).sum(axis=2)
        log_prob = -0.5 * (x.shape[1] * _LOG_2PI + log_det[None, :] + maha)
        with np.errstate(divide="ignore"):
            return log_prob + np.log(self.weights)[None, :]

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        wlp = self._weighted_log_prob(x)
        return np.exp(wlp - logsumexp(wlp, axis=1, keepdims=True))

    def score(self, x: np.ndarray) -> float:
        """Total log-likelihood of ``x``."""
        return float(logsumexp(self._weighted_log_prob(x), axis=1).sum())


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def em_fit(
    x: np.ndarray,
    k: int,
    *,
    max_iters: int = 200,
    tol: float = 1e-4,
    seed: int = 0,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmModel:
    """EM for a ``k``-component diagonal mixture with k-means++ seeded means.

    ``tol`` applies to the per-point mean log-likelihood. The floored M-step is
    the exact constrained maximizer, so the trace never decreases.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    rng = np.random.default_rng(seed)
    data_var = np.maximum(x.var(axis=0), variance_floor) if n > 1 else np.ones(d)
    model = GmmModel(
        means=_kmeanspp(x, k, rng),
        variances=np.tile(data_var, (k, 1)),
        weights=np.full(k, 1.0 / k),
    )
    trace: list[float] = []
    for _ in range(max_iters):
        wlp = model._weighted_log_prob(x)
        log_norm = logsumexp(wlp, axis=1)
        trace.append(float(log_norm.sum()))
        if len(trace) > 1 and (trace[-1] - trace[-2]) / n < tol:
            model.converged = True
            break
        resp = np.exp(wlp - log_norm[:, None])
        nk = resp.sum(axis=0)
        live = nk > 1e-300
        model.weights = nk / n
        means = model.means.copy()
        variances = model.variances.copy()
        r = resp[:, live]
        means[live] = (r.T @ x) / nk[live, None]
        sq = np.einsum("nk,nkd->kd", r, (x[:, None, :] - means[None, live, :]) ** 2)
        variances[live] = np.maximum(sq / nk[live, None], variance_floor)
        model.means, model.variances = means, variances
    else:
        trace.append(model.score(x))
    model.log_likelihood_trace = trace
    model.bic = -2.0 * trace[-1] + model.n_parameters() * math.log(n)
    return model


def fit_gmm(
    points,
    cfg=None,
    *,
    max_components: int | None = None,
    max_iters: int | None = None,
    tol: float | None = None,
    seed: int | None = None,
    n_init: int = 2,
    min_component_size: float = 2.0,
) -> GmmModel:
    """Fit mixtures for 1..min(max_components, n) components and keep the lowest BIC.

    ``cfg`` may be any object with ``gmm_max_components``, ``em_max_iters``,
    ``em_tol`` and ``seed`` attributes; keyword arguments override it.

    Fits where some component's effective size (sum of responsibilities) falls
    below ``min_component_size`` are rejected: with a fixed variance floor a
    component collapsed onto one point has unbounded likelihood and would
    otherwise win BIC on small samples.
    """
    def pick(name, override, default):
        if override is not None:
            return override
        return getattr(cfg, name, default) if cfg is not None else default

    max_components = pick("gmm_max_components", max_components, 50)
    max_iters = pick("em_max_iters", max_iters, 200)
    tol = pick("em_tol", tol, 1e-4)
    seed = pick("seed", seed, 0)

    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n == 0:
        raise ValueError("fit_gmm needs at least one point")
    if n == 1:
        return GmmModel(
            means=x.copy(),
            variances=np.ones_like(x),
            weights=np.ones(1),
            log_likelihood_trace=[0.0],
            bic=0.0,
            converged=True,
        )

    best: GmmModel | None = None
    for k in range(1, min(max_components, n) + 1):
        if k > 1 and n / k < min_component_size:
            break
        fits = [
            em_fit(x, k, max_iters=max_iters, tol=tol, seed=int(seed) * 1_000_003 + k * 101 + i)
            for i in range(n_init if k > 1 else 1)
        ]
        cand = max(fits, key=lambda m: m.log_likelihood)
        if k > 1 and cand.weights.min() * n < min_component_size:
            continue
        if best is None or cand.bic < best.bic - 1e-9:
            best = cand
    assert best is not None
    return best


def soft_assign(model: GmmModel, points, threshold: float = 0.1) -> list[list[int]]:
    """Components each point belongs to: responsibility >= threshold, argmax always in."""
    resp = model.responsibilities(np.asarray(points, dtype=np.float64))
    out = []
    for row in resp:
        top = int(np.argmax(row))
        members = sorted(set(np.flatnonzero(row >= threshold).tolist()) | {top})
        out.append(members)
    return out
