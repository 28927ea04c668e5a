"""Information-maximization objectives over discrete softmax states.

The core quantity is the closed-form mutual information between inputs and a
K-state latent implied by a row-stochastic posterior batch.  The trainable
losses replace the log's argument with a stop-gradient so that mini-batch
gradients stay unbiased, add a uniform-prior penalty that keeps states alive,
and optionally average over several hidden states at two spatial scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bayes import PosteriorBatch, PriorEstimate
from .errors import ConfigError, DomainError
from .report import ObjectiveReport
from . import tensor as T
from .tensor import Tensor, stop_gradient


@dataclass
class MimConfig:
    """Hyper-parameters of the information objective.

    ``alpha`` strengthens the uniform-prior penalty beyond its baseline weight
    of 1, ``beta`` weights the smoothness penalty, ``epsilon`` guards the logs,
    ``use_scales`` adds a 2x2/stride-2 average-pooled copy of every spatial
    state, and ``noise_sigma`` scales the smoothness perturbation.
    """

    alpha: float = 0.0
    beta: float = 0.0
    epsilon: float = 1e-7
    use_scales: bool = False
    pool_kernel: int = 2
    pool_stride: int = 2
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ConfigError("alpha and beta must be nonnegative")


@dataclass(frozen=True)
class SoftmaxState:
    """One softmaxed hidden state: (B, K) or, spatially, (B, K, H, W)."""

    state_id: str
    values: Tensor

    @property
    def spatial(self) -> bool:
        return self.values.ndim == 4


@dataclass(frozen=True)
class StateCollection:
    states: tuple[SoftmaxState, ...]

    def __iter__(self):
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def location_posteriors(self) -> list[tuple[str, PosteriorBatch]]:
        """Flatten into per-location posterior batches (diagnostic view)."""
        out = []
        for st in self.states:
            if st.spatial:
                _, _, H, W = st.values.shape
                for h in range(H):
                    for w in range(W):
                        out.append((f"{st.state_id}@{h},{w}",
                                    PosteriorBatch(Tensor(st.values.data[:, :, h, w]))))
            else:
                out.append((st.state_id, PosteriorBatch(Tensor(st.values.data))))
        return out


def _guarded_log(t: Tensor, eps: float) -> Tensor:
    """log(t + eps) where entries that are exactly zero are masked to keep the
    log defined; callers only ever multiply those entries by the zero they
    came from, so the convention 0*log(0) = 0 holds exactly."""
    fill = (t.data <= 0.0).astype(np.float64)
    if fill.any():
        t = t + Tensor(fill)
    return T.log(t + eps) if eps else T.log(t)


def mi_closed_form(p: PosteriorBatch, eps: float = 0.0) -> Tensor:
    """Closed-form mutual information of the batch-empirical joint.

    Computes mean_b sum_k L log((L + eps)/(prior + eps)) with the prior taken
    as the batch mean.  The default guard of 0 keeps the value exact for
    oracle comparisons; zero posterior entries contribute exactly zero.
    """
    v = p.values
    prior = T.mean_rows(v)
    terms = v * (_guarded_log(v, eps) - _guarded_log(prior, eps))
    return T.tmean(T.tsum(terms, axis=1))


def mim_v1_loss(p: PosteriorBatch, eps: float = 1e-7) -> Tensor:
    """Decoupled negative-MI loss with stop-gradient logs.

    Forward value equals -MI (up to the guard); its gradient equals the full
    gradient of -MI because blocked log-argument terms cancel exactly.
    """
    v = p.values
    prior = T.mean_rows(v)
    entropy_term = T.neg(T.tmean(T.tsum(v * _guarded_log(stop_gradient(v), eps), axis=1)))
    prior_term = T.tsum(prior * _guarded_log(stop_gradient(prior), eps))
    return entropy_term + prior_term


def uniform_prior_penalty_v1(prior: PriorEstimate, eps: float = 0.0) -> Tensor:
    """Negative entropy of the state prior: sum_k p_k log(p_k + eps)."""
    pv = prior.values
    return T.tsum(pv * _guarded_log(pv, eps))


def uniform_prior_penalty_v2(prior: PriorEstimate, eps: float = 0.0) -> Tensor:
    """Cross-entropy push toward the uniform prior.

    -sum_k [ (1/K) log(p_k + eps) + ((K-1)/K) log(1 - p_k + eps) ], minimized
    at p_k = 1/K and with gradients that blow up as any p_k approaches 1,
    unlike the negative-entropy form whose gradients vanish there.
    """
    pv = prior.values
    K = pv.shape[0]
    a = T.tsum(T.log(pv + eps) if eps else T.log(pv))
    b = T.tsum(T.log((1.0 - pv) + eps) if eps else T.log(1.0 - pv))
    return T.neg(a * (1.0 / K) + b * ((K - 1.0) / K))


def prior_gradient_strength(prior_k: float, K: int) -> tuple[float, float]:
    """Multipliers of d(prior_k)/d(theta) in the two penalty gradients.

    Returns ``(v1_coeff, v2_coeff)`` where v1 is log(p) (vanishes as p -> 1)
    and v2 is -(1/K)(1/p - (K-1)/(1-p)) (diverges as p -> 1).
    """
    if not 0.0 < prior_k < 1.0:
        raise DomainError(f"prior must lie strictly in (0, 1), got {prior_k!r}")
    v1 = math.log(prior_k)
    v2 = -(1.0 / K) * (1.0 / prior_k - (K - 1.0) / (1.0 - prior_k))
    return v1, v2


def collect_states(states: Sequence[Tensor], cfg: MimConfig) -> StateCollection:
    """Softmax every tapped state along its feature/channel axis.

    With ``use_scales`` each spatial state also contributes an average-pooled
    copy, appended after all original states.  Dense (2-D) states have no
    spatial axes and are never pooled.
    """
    collected = [SoftmaxState(f"h{i}", T.softmax(s, axis=1)) for i, s in enumerate(states)]
    if cfg.use_scales:
        for i, s in enumerate(states):
            if s.ndim == 4:
                pooled = T.avg_pool2d(s, cfg.pool_kernel, cfg.pool_stride)
                collected.append(SoftmaxState(f"h{i}_pooled", T.softmax(pooled, axis=1)))
    return StateCollection(tuple(collected))


def _state_mi_term(v: Tensor, eps: float) -> Tensor:
    # -(1/B) sum_bk v log<v + eps>, spatial states averaged over locations too
    return T.neg(T.tmean(T.tsum(v * _guarded_log(stop_gradient(v), eps), axis=1)))


def _state_prior_penalty(v: Tensor, eps: float, form: str) -> Tensor:
    K = v.shape[1]
    prior = T.tmean(v, axis=0)  # (K,) or (K, H, W); the per-location batch mean
    if form == "v1":
        penalty = T.tsum(prior * _guarded_log(stop_gradient(prior), eps), axis=0)
    else:
        a = T.tsum(T.log(prior + eps), axis=0)
        b = T.tsum(T.log((1.0 - prior) + eps), axis=0)
        penalty = T.neg(a * (1.0 / K) + b * ((K - 1.0) / K))
    return penalty if penalty.ndim == 0 else T.tmean(penalty)


def mim_v2_loss(sc: StateCollection, cfg: MimConfig, rc=0.0,
                prior_form: str = "v2") -> tuple[Tensor, ObjectiveReport]:
    """Full multi-state objective: state-averaged negative MI term plus
    (1 + alpha) times the state-averaged uniform-prior penalty plus beta
    times the supplied smoothness penalty.

    ``rc`` is the smoothness penalty computed by the caller (typically
    :func:`neuralbayes.dml.smoothness_penalty` on the pooled final state).
    ``prior_form='v1'`` swaps in the negative-entropy penalty for side-by-side
    comparisons; everything else stays identical.
    """
    if len(sc) == 0:
        raise ConfigError("state collection is empty")
    if prior_form not in ("v1", "v2"):
        raise ConfigError(f"unknown prior penalty form {prior_form!r}")
    n = len(sc)
    mi_total = None
    rp_total = None
    for st in sc:
        mi = _state_mi_term(st.values, cfg.epsilon)
        rp = _state_prior_penalty(st.values, cfg.epsilon, prior_form)
        mi_total = mi if mi_total is None else mi_total + mi
        rp_total = rp if rp_total is None else rp_total + rp
    mi_total = mi_total * (1.0 / n)
    rp_total = rp_total * ((1.0 + cfg.alpha) / n)
    total = mi_total + rp_total
    smooth_value = 0.0
    if isinstance(rc, Tensor):
        smooth = rc * cfg.beta
        total = total + smooth
        smooth_value = smooth.item()
    elif rc:
        smooth_value = cfg.beta * float(rc)
        total = total + smooth_value
    report = ObjectiveReport(mi_term=mi_total.item(), prior_term=rp_total.item(),
                             smooth_term=smooth_value, total=total.item())
    return total, report


def pooled_final_state(net, x, train: bool = True) -> Tensor:
    """The designated smoothness target: last tap, pooled to 1x1 if spatial,
    flattened to (B, C)."""
    _, states = net.forward_with_states(x, train=train)
    s = states[-1]
    if s.ndim == 4:
        k = max(s.shape[2], s.shape[3])
        s = T.avg_pool2d(s, kernel=k, stride=k)
        s = T.reshape(s, (s.shape[0], s.shape[1]))
    return s


def make_mim_objective(cfg: MimConfig, *, v1: bool = False):
    """Build a training closure (net, batch, rng) -> (loss, report)."""
    from . import dml  # local import: dml also imports bayes/tensor, no cycle

    def objective(net, xb: Tensor, rng: np.random.Generator):
        _, states = net.forward_with_states(xb, train=True)
        sc = collect_states(states, cfg)
        rc = 0.0
        if cfg.beta > 0.0:
            rc = dml.smoothness_penalty(lambda t: pooled_final_state(net, t, train=True),
                                        xb, cfg, rng)
        return mim_v2_loss(sc, cfg, rc, prior_form="v1" if v1 else "v2")

    return objective
