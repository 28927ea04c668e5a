"""Optimization loop with gradient accumulation, probes, and cluster scoring.

The accumulation schedule follows the two-level batch recipe: gradients are
computed on mini-batches of MBS samples (large enough for a faithful
batch-mean prior) and averaged over BS/MBS mini-batches before each parameter
update.  All randomness flows through seeded generators, so identical configs
reproduce identical trajectories bitwise.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Network, build_mlp
from .report import ObjectiveReport
from . import tensor as T
from .tensor import Tensor, gradients


@dataclass
class AdamState:
    """Adam moments and hyper-parameters; weight decay is decoupled."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], lr: float = 1e-3,
                   weight_decay: float = 0.0) -> "AdamState":
        state = cls(lr=lr, weight_decay=weight_decay)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update; swaps fresh buffers into the leaves."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({name})")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = state.m[name] / c1
        vhat = state.v[name] / c2
        new = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay > 0.0:
            new = new - state.lr * state.weight_decay * p.data
        p.data = new


@dataclass
class AccumulationSchedule:
    """Mini-batch size, accumulation window, and epoch count.

    BS must be an integer multiple of MBS: configurations where the window is
    smaller than one mini-batch are invalid, not zero-accuracy corners.
    """

    mbs: int
    bs: int
    epochs: int

    def __post_init__(self):
        if self.mbs < 1 or self.bs < self.mbs:
            raise ConfigError(f"need BS >= MBS >= 1, got MBS={self.mbs}, BS={self.bs}")
        if self.bs % self.mbs != 0:
            raise ConfigError(f"BS must be a multiple of MBS, got MBS={self.mbs}, BS={self.bs}")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")


@dataclass
class TrainLog:
    """Per-update objective reports plus run provenance."""

    records: list = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def append(self, step: int, report: ObjectiveReport) -> None:
        if self.records and step <= self.records[-1]["step"]:
            raise ConfigError("log steps must increase monotonically")
        self.records.append(report.as_record(step))

    def write_jsonl(self, path: str | Path) -> None:
        # wall clock is provenance, not a record: the jsonl stays bitwise reproducible
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def write_metrics_csv(self, path: str | Path) -> None:
        lines = ["step,term,value"]
        for rec in self.records:
            for term in ("mi_term", "prior_term", "smooth_term", "total"):
                lines.append(f"{rec['step']},{term},{rec[term]:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


ObjectiveFn = Callable[[Network, Tensor, np.random.Generator], tuple[Tensor, ObjectiveReport]]


def train_objective(net: Network, points: np.ndarray, objective: ObjectiveFn,
                    sched: AccumulationSchedule, opt: AdamState, seed: int,
                    epoch_callback: Callable[[int, Network], bool | None] | None = None) -> TrainLog:
    """Run the accumulation schedule over shuffled epochs of ``points``.

    Each mini-batch's loss uses its own batch statistics (the prior estimate
    is the MBS-batch mean inside the objective); gradients are averaged over
    the accumulation window before each Adam update.  The last incomplete
    mini-batch of an epoch is dropped so every prior estimate sees a full MBS
    samples; a trailing partial *window* still triggers an update.

    ``epoch_callback(epoch, net)`` runs after every epoch; returning True
    stops training early (the hook used for holdout-based early stopping).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < sched.mbs:
        raise ConfigError(f"dataset of {n} samples cannot fill one mini-batch of {sched.mbs}")
    params = net.parameters()
    rng = np.random.default_rng(seed)
    log = TrainLog(seed=seed, config={"mbs": sched.mbs, "bs": sched.bs, "epochs": sched.epochs,
                                      "lr": opt.lr, "weight_decay": opt.weight_decay})
    window = sched.bs // sched.mbs
    start = time.perf_counter()
    step = 0
    for epoch in range(sched.epochs):
        perm = rng.permutation(n)
        batches = n // sched.mbs
        accum: dict[str, np.ndarray] | None = None
        reports: list[ObjectiveReport] = []

        def flush():
            nonlocal accum, reports, step
            if not reports:
                return
            scale = 1.0 / len(reports)
            averaged = {name: g * scale for name, g in accum.items()}
            adam_step(params, averaged, opt)
            step += 1
            log.append(step, ObjectiveReport.average(reports))
            accum, reports = None, []

        for b in range(batches):
            idx = perm[b * sched.mbs:(b + 1) * sched.mbs]
            xb = Tensor(points[idx])
            loss, report = objective(net, xb, rng)
            grads = gradients(loss, params)
            if accum is None:
                accum = {name: g.copy() for name, g in grads.items()}
            else:
                for name, g in grads.items():
                    accum[name] += g
            reports.append(report)
            if len(reports) == window:
                flush()
        flush()
        if epoch_callback is not None and epoch_callback(epoch, net):
            break
    log.wall_clock = time.perf_counter() - start
    return log


def holdout_early_stopper(evaluate: Callable[[Network], float], patience: int):
    """Build an epoch callback that stops when ``evaluate`` (lower is better,
    e.g. the objective on a designated holdout split) has not improved for
    ``patience`` consecutive epochs."""
    if patience < 1:
        raise ConfigError("patience must be at least 1")
    best = {"value": np.inf, "stale": 0}

    def callback(epoch: int, net: Network) -> bool:
        value = evaluate(net)
        if value < best["value"] - 1e-12:
            best["value"] = value
            best["stale"] = 0
            return False
        best["stale"] += 1
        return best["stale"] >= patience

    return callback


def softmax_cross_entropy(logits: Tensor, onehot: np.ndarray, guard: float = 1e-12) -> Tensor:
    probs = T.softmax(logits, axis=1)
    return T.neg(T.tmean(T.tsum(Tensor(onehot) * T.log(probs + guard), axis=1)))


def linear_probe(features: np.ndarray, labels: np.ndarray, hidden_units: int = 200,
                 epochs: int = 30, lr: float = 1e-3, seed: int = 0,
                 batch_size: int = 128, holdout: float = 0.25) -> float:
    """Accuracy of a one-hidden-layer classifier on held-out features.

    The features are frozen inputs: nothing propagates back into whatever
    produced them.  A seeded fraction ``holdout`` is held out for scoring.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ShapeError(f"features (N, d) and labels (N,) required, got "
                         f"{features.shape} and {labels.shape}")
    n, d = features.shape
    classes = int(labels.max()) + 1
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = max(1, int(round(holdout * n)))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    if train_idx.size < batch_size:
        batch_size = max(1, train_idx.size)

    probe = build_mlp(d, [hidden_units], classes, seed=seed, batchnorm=False, softmax_head=False)
    params = probe.parameters()
    opt = AdamState.for_params(params, lr=lr)
    onehot = np.eye(classes)[labels]
    for _ in range(epochs):
        order = rng.permutation(train_idx.size)
        for b in range(train_idx.size // batch_size):
            idx = train_idx[order[b * batch_size:(b + 1) * batch_size]]
            loss = softmax_cross_entropy(probe.forward(Tensor(features[idx]), train=True),
                                         onehot[idx])
            adam_step(params, gradients(loss, params), opt)
    logits = probe.forward(Tensor(features[test_idx]), train=False).data
    return float((logits.argmax(axis=1) == labels[test_idx]).mean())


def extract_features(net: Network, points: np.ndarray, tap: str = "last",
                     bn_train_mode: bool = False, batch_size: int = 1000) -> np.ndarray:
    """Frozen hidden-state features at a named tap ('h0'.., 'last', or 'out').

    Batch norm runs in eval mode by default; nothing in the network mutates
    except (in the non-default train mode) running statistics.
    """
    names = net.tap_names()
    if tap == "last":
        tap = names[-1] if names else "out"
    if tap != "out" and tap not in names:
        raise ConfigError(f"unknown tap {tap!r}; available: {names + ['out', 'last']}")
    chunks = []
    for start in range(0, points.shape[0], batch_size):
        xb = Tensor(np.asarray(points[start:start + batch_size], dtype=np.float64))
        out, states = net.forward_with_states(xb, train=bn_train_mode)
        h = out if tap == "out" else states[names.index(tap)]
        chunks.append(h.data.reshape(h.shape[0], -1))
    return np.vstack(chunks)


def predict_components(net: Network, points: np.ndarray, batch_size: int = 2000) -> np.ndarray:
    """Hard labels from the network head: argmax over states (0.5 threshold
    for a two-column head)."""
    preds = []
    for start in range(0, points.shape[0], batch_size):
        out = net.forward(Tensor(points[start:start + batch_size]), train=False).data
        preds.append(out.argmax(axis=1))
    return np.concatenate(preds)


def cluster_accuracy(pred: np.ndarray, truth: np.ndarray, k: int) -> float:
    """Best label-permutation agreement between predictions and ground truth."""
    if k > 8:
        raise ConfigError("brute-force permutation scoring is limited to k <= 8")
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError("pred and truth must have matching shapes")
    if pred.size == 0:
        raise ShapeError("cannot score an empty prediction")
    conf = np.zeros((k, k))
    np.add.at(conf, (pred, truth), 1)
    best = max(sum(conf[a, sigma[a]] for a in range(k))
               for sigma in itertools.permutations(range(k)))
    return float(best / pred.size)
