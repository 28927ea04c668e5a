"""Layers, initialization, reference architectures, and checkpointing.

Networks are flat layer lists.  "Taps" mark layers whose post-activation
output is exported as a hidden state by ``forward_with_states`` (used by the
multi-state information objective and by probe feature extraction).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from . import tensor as T
from .tensor import Tensor

BN_VAR_FLOOR = 1e-5


def orthogonal_init(rows: int, cols: int, seed: int) -> Tensor:
    """Orthonormal (rows, cols) matrix, deterministic per seed.

    If rows <= cols the rows are orthonormal (W Wt = I), otherwise the columns
    are (Wt W = I); all singular values are exactly 1 up to float rounding.
    """
    if rows < 1 or cols < 1:
        raise ShapeError("orthogonal_init needs positive dimensions")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity so the result is unique
    if rows < cols:
        q = q.T
    return Tensor(q[:rows, :cols].copy())


class DenseLayer:
    """Affine map x -> x Wt + b with orthogonally initialized weight (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, seed: int | None = 0):
        self.in_dim, self.out_dim, self.seed = in_dim, out_dim, seed
        if seed is None:
            w = np.zeros((out_dim, in_dim))
        else:
            w = orthogonal_init(out_dim, in_dim, seed).data
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.matmul(x, T.transpose(self.weight)) + self.bias

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim, "seed": self.seed}


class Conv2dLayer:
    """2-D convolution with (out, in, k, k) kernels, orthogonal across the fan-in."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, seed: int | None = 0):
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding, self.seed = kernel, stride, padding, seed
        fan_in = in_channels * kernel * kernel
        if seed is None:
            w = np.zeros((out_channels, fan_in))
        else:
            w = orthogonal_init(out_channels, fan_in, seed).data
        self.kernels = Tensor(w.reshape(out_channels, in_channels, kernel, kernel), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.conv2d(x, self.kernels, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "conv", "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding, "seed": self.seed}


class BatchNormLayer:
    """Feature-wise normalization with running statistics.

    Train mode normalizes with batch statistics (variance floored at 1e-5 so a
    constant feature yields zeros rather than a division blow-up) and updates
    the running stats; eval mode uses the stored stats and mutates nothing.
    """

    def __init__(self, features: int, momentum: float = 0.1):
        if not 0.0 < momentum < 1.0:
            raise ConfigError("batch-norm momentum must lie in (0, 1)")
        self.features, self.momentum = features, momentum
        self.scale = Tensor(np.ones(features), requires_grad=True)
        self.shift = Tensor(np.zeros(features), requires_grad=True)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def _param_shape(self, ndim: int):
        return (self.features,) if ndim == 2 else (1, self.features, 1, 1)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        if x.ndim not in (2, 4):
            raise ShapeError(f"batch norm expects (B, F) or (B, C, H, W), got shape {x.shape}")
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        pshape = self._param_shape(x.ndim)
        if train:
            if x.shape[0] < 2:
                raise ShapeError("train-mode batch norm needs a batch of at least 2")
            mu = T.tmean(x, axis=axes)
            xc = x - T.reshape(mu, pshape)
            var = T.tmean(xc * xc, axis=axes)
            den = T.sqrt(T.relu(var - BN_VAR_FLOOR) + BN_VAR_FLOOR)  # sqrt(max(var, floor))
            xhat = xc / T.reshape(den, pshape)
            n = x.size // self.features
            unbiased = var.data * (n / (n - 1)) if n > 1 else var.data
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            den_np = np.sqrt(np.maximum(self.running_var, BN_VAR_FLOOR))
            xhat = (x - Tensor(self.running_mean.reshape(pshape))) / Tensor(den_np.reshape(pshape))
        return xhat * T.reshape(self.scale, pshape) + T.reshape(self.shift, pshape)

    def parameters(self):
        return {"scale": self.scale, "shift": self.shift}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, value)

    def spec(self):
        return {"type": "batchnorm", "features": self.features, "momentum": self.momentum}


class ReluLayer:
    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.relu(x)

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "relu"}


class TanhLayer:
    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.tanh(x)

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "tanh"}


class SoftmaxLayer:
    """Softmax along the feature/channel axis (axis 1)."""

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.softmax(x, axis=1)

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "softmax"}


class MaxPool2dLayer:
    def __init__(self, kernel: int = 2, stride: int = 2):
        self.kernel, self.stride = kernel, stride

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.max_pool2d(x, self.kernel, self.stride)

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "maxpool", "kernel": self.kernel, "stride": self.stride}


class AvgPool2dLayer:
    """Average pooling; ``spatial_all=True`` pools the whole map to 1x1."""

    def __init__(self, kernel: int = 2, stride: int = 2, spatial_all: bool = False):
        self.kernel, self.stride, self.spatial_all = kernel, stride, spatial_all

    def forward(self, x: Tensor, train: bool) -> Tensor:
        if self.spatial_all:
            k = max(x.shape[2], x.shape[3])
            return T.avg_pool2d(x, kernel=k, stride=k)
        return T.avg_pool2d(x, self.kernel, self.stride)

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "avgpool", "kernel": self.kernel, "stride": self.stride,
                "spatial_all": self.spatial_all}


class FlattenLayer:
    def forward(self, x: Tensor, train: bool) -> Tensor:
        return T.reshape(x, (x.shape[0], -1))

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def spec(self):
        return {"type": "flatten"}


_LAYER_TYPES = {
    "dense": lambda s: DenseLayer(s["in_dim"], s["out_dim"], seed=None),
    "conv": lambda s: Conv2dLayer(s["in_channels"], s["out_channels"], s["kernel"],
                                  s["stride"], s["padding"], seed=None),
    "batchnorm": lambda s: BatchNormLayer(s["features"], s["momentum"]),
    "relu": lambda s: ReluLayer(),
    "tanh": lambda s: TanhLayer(),
    "softmax": lambda s: SoftmaxLayer(),
    "maxpool": lambda s: MaxPool2dLayer(s["kernel"], s["stride"]),
    "avgpool": lambda s: AvgPool2dLayer(s["kernel"], s["stride"], s["spatial_all"]),
    "flatten": lambda s: FlattenLayer(),
}


class Network:
    """An ordered layer stack with declared hidden-state taps."""

    def __init__(self, layers: Sequence, taps: Sequence[int] = ()):
        self.layers = list(layers)
        for t in taps:
            if not 0 <= t < len(self.layers):
                raise ConfigError(f"tap {t} does not reference an existing layer")
        self.taps = tuple(taps)

    def forward_with_states(self, x, train: bool = False) -> tuple[Tensor, list[Tensor]]:
        """Run the stack, returning the final output and every tapped state in order."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        states = {}
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, train)
            if i in self.taps:
                states[i] = h
        return h, [states[i] for i in self.taps]

    def forward(self, x, train: bool = False) -> Tensor:
        out, _ = self.forward_with_states(x, train)
        return out

    __call__ = forward

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"layer{i}.{name}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers().items():
                out[f"layer{i}.{name}"] = b
        return out

    def tap_names(self) -> list[str]:
        return [f"h{j}" for j in range(len(self.taps))]

    def spec(self) -> dict:
        return {"layers": [l.spec() for l in self.layers], "taps": list(self.taps)}


def batchnorm_forward(layer: BatchNormLayer, x, mode: str) -> Tensor:
    """Explicit-mode batch-norm application; ``mode`` is 'train' or 'eval'."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown batch-norm mode {mode!r}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    return layer.forward(x, train=(mode == "train"))


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def build_mlp(in_dim: int, hidden: Sequence[int], out_units: int | None, seed: int,
              batchnorm: bool = False, softmax_head: bool = True,
              activation: str = "relu") -> Network:
    """Dense encoder: per hidden width a Dense(+BatchNorm)+activation block,
    tapped after each activation, optionally followed by a Dense head with
    softmax.

    ``out_units=None`` builds a headless encoder whose output is the last tap.
    """
    act = {"relu": ReluLayer, "tanh": TanhLayer}
    if activation not in act:
        raise ConfigError(f"unknown activation {activation!r}")
    seeds = _child_seeds(seed, len(hidden) + 1)
    layers, taps = [], []
    prev = in_dim
    for i, width in enumerate(hidden):
        layers.append(DenseLayer(prev, width, seed=seeds[i]))
        if batchnorm:
            layers.append(BatchNormLayer(width))
        layers.append(act[activation]())
        taps.append(len(layers) - 1)
        prev = width
    if out_units is not None:
        layers.append(DenseLayer(prev, out_units, seed=seeds[len(hidden)]))
        if softmax_head:
            layers.append(SoftmaxLayer())
    return Network(layers, taps)


def build_cnn(arch: str, input_shape: tuple[int, int, int], seed: int,
              batchnorm: bool = True, softmax_head: bool = False) -> Network:
    """Build a convolutional encoder from a compact layer string.

    Tokens are '-'-separated: ``C(filters,kernel,stride,padding)`` for a conv
    block (conv + optional batch norm + ReLU, tapped after the ReLU),
    ``P(kernel,stride,padding,max|avg)`` for pooling (``P(.,.,.,avg)`` pools
    the whole spatial field to 1x1), and ``FC(n)`` for flatten + dense.
    ``input_shape`` is (channels, height, width); FC input sizes are resolved
    by tracing a dummy forward through the layers built so far.
    """
    c, h, w = input_shape
    tokens = [t.strip() for t in arch.split("-") if t.strip()]
    seeds = _child_seeds(seed, len(tokens))
    layers, taps = [], []
    channels = c
    probe = np.zeros((1, c, h, w))
    for i, tok in enumerate(tokens):
        kind, _, rest = tok.partition("(")
        if not rest.endswith(")"):
            raise ConfigError(f"malformed architecture token {tok!r}")
        args = [a.strip() for a in rest[:-1].split(",")]
        if kind == "C":
            f, k, s, p = (int(a) for a in args)
            layers.append(Conv2dLayer(channels, f, k, s, p, seed=seeds[i]))
            if batchnorm:
                layers.append(BatchNormLayer(f))
            layers.append(ReluLayer())
            taps.append(len(layers) - 1)
            channels = f
        elif kind == "P":
            mode = args[3]
            if args[0] == ".":
                if mode != "avg":
                    raise ConfigError("global pooling is only defined for avg mode")
                layers.append(AvgPool2dLayer(spatial_all=True))
            elif mode == "max":
                layers.append(MaxPool2dLayer(int(args[0]), int(args[1])))
            elif mode == "avg":
                layers.append(AvgPool2dLayer(int(args[0]), int(args[1])))
            else:
                raise ConfigError(f"unknown pool mode {mode!r}")
        elif kind == "FC":
            out = Network(layers).forward(Tensor(probe), train=False).data
            if out.ndim == 4:
                layers.append(FlattenLayer())
                flat_dim = out.shape[1] * out.shape[2] * out.shape[3]
            else:
                flat_dim = out.shape[1]
            layers.append(DenseLayer(flat_dim, int(args[0]), seed=seeds[i]))
        else:
            raise ConfigError(f"unknown layer token {tok!r}")
    if softmax_head:
        layers.append(SoftmaxLayer())
    return Network(layers, taps)


# --- checkpoint format: <stem>.json manifest + <stem>.bin little-endian float64 ---

CHECKPOINT_FORMAT = "nb-checkpoint-v1"


def _entry_order(net: Network) -> list[tuple[str, str]]:
    """(name, kind) pairs in declaration order; kind is 'param' or 'buffer'."""
    entries = []
    for i, layer in enumerate(net.layers):
        for name in layer.parameters():
            entries.append((f"layer{i}.{name}", "param"))
        for name in layer.buffers():
            entries.append((f"layer{i}.{name}", "buffer"))
    return entries


def save_checkpoint(net: Network, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.json`` + ``<stem>.bin``; the round trip is bit-exact."""
    stem = Path(stem)
    params, buffers = net.parameters(), net.buffers()
    entries, blobs = [], []
    for name, kind in _entry_order(net):
        arr = params[name].data if kind == "param" else buffers[name]
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    manifest = {"format": CHECKPOINT_FORMAT, "dtype": "<f8",
                "architecture": net.spec(), "entries": entries}
    json_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    bin_path.write_bytes(b"".join(blobs))
    return json_path, bin_path


def load_checkpoint(stem: str | Path) -> Network:
    stem = Path(stem)
    json_path = stem if stem.suffix == ".json" else stem.with_suffix(".json")
    bin_path = json_path.with_suffix(".bin")
    try:
        manifest = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint manifest {json_path} is not valid JSON: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"unsupported checkpoint format {manifest.get('format')!r}")
    arch = manifest["architecture"]
    layers = []
    for lspec in arch["layers"]:
        kind = lspec["type"]
        if kind not in _LAYER_TYPES:
            raise FormatError(f"unknown layer type {kind!r} in checkpoint")
        layer = _LAYER_TYPES[kind](lspec)
        if hasattr(layer, "seed"):  # keep the recorded init seed so re-saves are byte-identical
            layer.seed = lspec.get("seed")
        layers.append(layer)
    net = Network(layers, arch["taps"])
    raw = bin_path.read_bytes()
    offset = 0
    params, buffers = net.parameters(), net.buffers()
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if offset + nbytes > len(raw):
            raise FormatError(
                f"checkpoint binary truncated at byte {len(raw)}: entry {entry['name']} "
                f"needs bytes [{offset}, {offset + nbytes})")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += nbytes
        name = entry["name"]
        if entry["kind"] == "param":
            params[name].data = arr
        else:
            layer_idx, buf_name = name.split(".", 1)
            net.layers[int(layer_idx[5:])].set_buffer(buf_name, arr)
    if offset != len(raw):
        raise FormatError(f"checkpoint binary has {len(raw) - offset} trailing bytes at offset {offset}")
    return net
