"""Disjoint-manifold labeling: Jensen-Shannon partition objectives.

A soft label L(x) in [0, 1] (or a K-way posterior) splits the batch-empirical
data distribution into conditionals; maximizing their JS divergence assigns a
distinct constant label to every connected component of the support, provided
the labeling function stays smooth.  The trainable losses are the guarded
log(1 + ratio) forms; the theory-form objective (exact, with its +log 2
offset) is kept separately for reporting and oracle comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bayes import PosteriorBatch
from .errors import ConfigError, DegeneratePriorError, ShapeError
from . import tensor as T
from .tensor import Tensor

LOG2 = math.log(2.0)


@dataclass
class DmlConfig:
    """Partition count, smoothness weight, log guard, and perturbation scale."""

    partitions: int = 2
    beta: float = 0.0
    epsilon: float = 1e-7
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.partitions < 2:
            raise ConfigError("need at least 2 partitions")
        if self.epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        if self.noise_sigma <= 0.0:
            raise ConfigError("noise_sigma must be positive")
        if self.beta < 0.0:
            raise ConfigError("beta must be nonnegative")


def _label_array(labels) -> np.ndarray:
    arr = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    arr = arr.reshape(-1)
    if arr.size < 1:
        raise ShapeError("need at least one sample")
    if np.min(arr) < 0.0 or np.max(arr) > 1.0:
        raise ShapeError("soft labels must lie in [0, 1]")
    return arr


def _label_tensor(labels) -> Tensor:
    t = labels if isinstance(labels, Tensor) else Tensor(labels)
    if t.ndim == 2 and t.shape[1] == 1:
        t = T.reshape(t, (t.shape[0],))
    if t.ndim != 1:
        raise ShapeError(f"soft labels must be (B,) or (B, 1), got shape {t.shape}")
    return t


def dml_binary_objective(labels, prior: float) -> float:
    """Theory-form binary objective: JS divergence of the two implied
    conditionals on the batch atoms, so its value lies in [0, log 2] and its
    maximum log 2 is attained exactly when the labels split the support.

    ``labels`` holds L(x) per sample; ``prior`` is E[L] (pass the batch mean,
    or any hypothetical value to probe the landscape).  Zero-weight atoms
    follow the 0*log(0) = 0 convention exactly; no guards are applied.
    """
    L = _label_array(labels)
    if not 0.0 < prior < 1.0:
        raise DegeneratePriorError(f"prior must lie strictly in (0, 1), got {prior!r}")
    f1 = L / prior
    f0 = (1.0 - L) / (1.0 - prior)
    denom = f1 + f0  # strictly positive: f1 and f0 cannot vanish together
    t1 = np.zeros_like(f1)
    m1 = f1 > 0.0
    t1[m1] = f1[m1] * np.log(f1[m1] / denom[m1])
    t0 = np.zeros_like(f0)
    m0 = f0 > 0.0
    t0[m0] = f0[m0] * np.log(f0[m0] / denom[m0])
    return 0.5 * float(t1.mean()) + 0.5 * float(t0.mean()) + LOG2


def dml_binary_loss(labels, cfg: DmlConfig, prior: float | None = None) -> Tensor:
    """Trainable binary loss: 0.5 E[f1 log(1 + f0/f1)] + 0.5 E[f0 log(1 + f1/f0)]
    with f1 = L/E[L] + eps and f0 = (1-L)/(1-E[L]) + eps.

    The batch-mean prior stays live on the tape (this is why training needs
    batches large enough for a faithful prior estimate).  Equals
    log 2 - :func:`dml_binary_objective` up to the guard.  The smoothness term
    is added by the caller as beta * R_c.  ``prior`` substitutes a hypothetical
    constant for the batch mean (a landscape-probing diagnostic, never used in
    training).
    """
    L = _label_tensor(labels)
    if L.shape[0] < 2:
        raise ShapeError("binary loss needs a batch of at least 2")
    prior = T.mean_all(L) if prior is None else Tensor(np.asarray(prior))
    pv = float(prior.data)
    if not 0.0 < pv < 1.0:
        raise DegeneratePriorError(f"batch-mean prior hit {pv!r}; labels are degenerate")
    eps = cfg.epsilon
    f1 = L / prior + eps
    f0 = (1.0 - L) / (1.0 - prior) + eps
    t1 = T.tmean(f1 * T.log(f0 / f1 + 1.0))
    t0 = T.tmean(f0 * T.log(f1 / f0 + 1.0))
    return t1 * 0.5 + t0 * 0.5


def dml_multi_loss(p: PosteriorBatch, cfg: DmlConfig) -> Tensor:
    """K-partition loss: minus the mean over states of the one-vs-rest JS
    objective, with the same guarded implementation form as the binary case.

    Ranges over [-log 2, ~0]; equals ``dml_binary_loss - log 2`` at K = 2.
    """
    v = p.values
    B, K = v.shape
    if K < 2:
        raise ShapeError("multi-partition loss needs K >= 2 states")
    if B < 2:
        raise ShapeError("multi-partition loss needs a batch of at least 2")
    prior = T.mean_rows(v)
    pv = prior.data
    if np.min(pv) <= 0.0 or np.max(pv) >= 1.0:
        bad = int(np.argmin(np.minimum(pv, 1.0 - pv)))
        raise DegeneratePriorError(
            f"prior entry {bad} = {pv[bad]!r} is degenerate; every state prior must lie in (0, 1)")
    eps = cfg.epsilon
    f = v / prior + eps
    fbar = (1.0 - v) / (1.0 - prior) + eps
    per_entry = f * T.log(fbar / f + 1.0) + fbar * T.log(f / fbar + 1.0)
    return T.tmean(per_entry) * 0.5 - LOG2


def smoothness_penalty(net, batch, cfg, rng: np.random.Generator, *,
                       noise: np.ndarray | None = None, zeta: float | None = None) -> Tensor:
    """Finite-difference smoothness of ``net`` under data-spanned perturbations.

    Per sample i, the direction is X v_i (X the n x B batch matrix, v_i i.i.d.
    standard normal), unit-normalized; a single scale zeta ~ N(0, sigma^2) is
    drawn per batch (re-drawn while |zeta| < 1e-4, which would blow up the
    1/zeta^2 normalization).  Returns
    (1/B) sum_i ||net(x_i) - net(x_i + zeta * dhat_i)||^2 / zeta^2.

    ``net`` is any callable Tensor -> Tensor whose output is (B, d); ``cfg``
    supplies ``noise_sigma``.  ``noise`` and ``zeta`` override the random draws
    (used by tests that check the arithmetic against direct evaluation).
    """
    xb = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    if xb.ndim < 2 or xb.shape[0] < 2:
        raise ShapeError(f"smoothness penalty needs a (B, ...) batch with B >= 2, got {xb.shape}")
    if not np.any(xb):
        raise ShapeError("batch matrix is all zeros; data-span directions are undefined")
    B = xb.shape[0]
    flat = xb.reshape(B, -1)  # direction algebra treats samples as vectors
    v = rng.standard_normal((B, B)) if noise is None else np.asarray(noise, dtype=np.float64)
    delta = flat.T @ v  # column i spans the batch: X v_i
    norms = np.linalg.norm(delta, axis=0)
    if np.min(norms) <= 0.0:
        raise ShapeError("a perturbation direction collapsed to zero")
    dhat = (delta / norms).T  # (B, n), unit rows
    if zeta is None:
        zeta = float(rng.normal(0.0, cfg.noise_sigma))
        for _ in range(100):  # |zeta| < 1e-4 would blow up the 1/zeta^2 normalization
            if abs(zeta) >= 1e-4:
                break
            zeta = float(rng.normal(0.0, cfg.noise_sigma))
        else:
            raise ConfigError(
                f"noise_sigma={cfg.noise_sigma!r} cannot produce a usable scale (|zeta| >= 1e-4)")
    x0 = batch if isinstance(batch, Tensor) else Tensor(xb)
    x1 = Tensor((flat + zeta * dhat).reshape(xb.shape))
    y0 = net(x0)
    y1 = net(x1)
    diff = y0 - y1
    if diff.ndim == 1:
        diff = T.reshape(diff, (B, 1))
    return T.tmean(T.tsum(diff * diff, axis=1)) * (1.0 / zeta**2)


def implied_binary_atom_weights(labels, prior: float) -> tuple[np.ndarray, np.ndarray]:
    """Atom weights (w0, w1) of the two implied conditionals on a uniform
    batch: w0_i = (1 - L_i) / (B * (1 - prior)), w1_i = L_i / (B * prior)."""
    L = _label_array(labels)
    if not 0.0 < prior < 1.0:
        raise DegeneratePriorError(f"prior must lie strictly in (0, 1), got {prior!r}")
    B = L.size
    return (1.0 - L) / (B * (1.0 - prior)), L / (B * prior)


def make_dml_objective(cfg: DmlConfig):
    """Build a training closure (net, batch, rng) -> (loss, report).

    The network head must be a K-way softmax; for two partitions the loss uses
    its first column as the scalar label L.
    """
    from .report import ObjectiveReport

    def objective(net, xb: Tensor, rng: np.random.Generator):
        out = net.forward(xb, train=True)
        if cfg.partitions == 2:
            js_loss = dml_binary_loss(T.column(out, 0), cfg)

            def label_fn(t):
                o = net.forward(t, train=True)
                return T.reshape(T.column(o, 0), (o.shape[0], 1))
        else:
            js_loss = dml_multi_loss(PosteriorBatch(out), cfg)

            def label_fn(t):
                return net.forward(t, train=True)

        total = js_loss
        smooth_value = 0.0
        if cfg.beta > 0.0:
            rc = smoothness_penalty(label_fn, xb, cfg, rng)
            smooth = rc * cfg.beta
            total = total + smooth
            smooth_value = smooth.item()
        report = ObjectiveReport(mi_term=js_loss.item(), prior_term=0.0,
                                 smooth_term=smooth_value, total=total.item())
        return total, report

    return objective
