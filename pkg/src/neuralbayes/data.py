"""Synthetic manifold datasets, high-dimensional lifting, and file ingestion.

Generators are deterministic per seed and post-check that the components they
emit really are well separated (minimum inter-component distance above four
noise standard deviations), since the labeling objective's optimality argument
only holds for disjoint supports.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetError, FormatError, ShapeError
from .nn import orthogonal_init

STD_FLOOR = 1e-8

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class ManifoldDataset:
    """A labeled point cloud plus normalization and provenance metadata."""

    points: np.ndarray            # (N, n) float64
    components: np.ndarray        # (N,) integer component ids
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.int64)
        if self.points.ndim != 2:
            raise ShapeError(f"points must be (N, n), got shape {self.points.shape}")
        if self.components.shape != (self.points.shape[0],):
            raise ShapeError("one component id per point required")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def num_components(self) -> int:
        return int(self.components.max()) + 1 if self.size else 0


def min_inter_component_distance(points: np.ndarray, components: np.ndarray) -> float:
    """Smallest Euclidean distance between points of different components."""
    best = np.inf
    ids = np.unique(components)
    for i, a in enumerate(ids):
        pa = points[components == a]
        for b in ids[i + 1:]:
            pb = points[components == b]
            d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
            best = min(best, float(np.sqrt(d2.min())))
    return best


def _check_disjoint(points, components, noise, what: str) -> float:
    dist = min_inter_component_distance(points, components)
    if dist <= 4.0 * noise:
        raise DatasetError(
            f"{what}: components are not well separated "
            f"(min distance {dist:.4f} <= 4 * noise = {4 * noise:.4f}); "
            "reduce the noise or widen the gap")
    return dist


def make_two_moons(n_per: int, gap: float = 0.25, noise: float = 0.06, seed: int = 0) -> ManifoldDataset:
    """Two interlocking crescent arcs separated by ``0.5 + gap`` before noise."""
    if n_per < 1:
        raise DatasetError("n_per must be at least 1")
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, np.pi, n_per)
    t1 = rng.uniform(0.0, np.pi, n_per)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - gap - np.sin(t1)])
    points = np.vstack([upper, lower]) + rng.normal(0.0, noise, (2 * n_per, 2))
    components = np.repeat([0, 1], n_per)
    dist = _check_disjoint(points, components, noise, "two moons")
    meta = {"kind": "moons", "n_per": n_per, "gap": gap, "noise": noise,
            "min_inter_component_distance": dist}
    return ManifoldDataset(points, components, seed=seed, meta=meta)


def make_circles(n_per: int, radii: Sequence[float] = (1.0, 2.0), noise: float = 0.06,
                 seed: int = 0) -> ManifoldDataset:
    """Concentric rings, one component per radius."""
    if n_per < 1:
        raise DatasetError("n_per must be at least 1")
    if len(radii) < 2 or any(r <= 0 for r in radii):
        raise DatasetError("need at least two positive radii")
    rng = np.random.default_rng(seed)
    chunks, labels = [], []
    for c, r in enumerate(radii):
        theta = rng.uniform(0.0, 2.0 * np.pi, n_per)
        ring = r * np.column_stack([np.cos(theta), np.sin(theta)])
        chunks.append(ring)
        labels.append(np.full(n_per, c))
    points = np.vstack(chunks) + rng.normal(0.0, noise, (n_per * len(radii), 2))
    components = np.concatenate(labels)
    dist = _check_disjoint(points, components, noise, "circles")
    meta = {"kind": "circles", "n_per": n_per, "radii": list(radii), "noise": noise,
            "min_inter_component_distance": dist}
    return ManifoldDataset(points, components, seed=seed, meta=meta)


def make_blobs(k: int, n_per: int, centers: Sequence[Sequence[float]] | None = None,
               noise: float = 0.3, seed: int = 0) -> ManifoldDataset:
    """k isotropic Gaussian clusters; default centers sit on a radius-4 circle."""
    if n_per < 1:
        raise DatasetError("n_per must be at least 1")
    if k < 2:
        raise DatasetError("need at least 2 blobs")
    if centers is None:
        angles = 2.0 * np.pi * np.arange(k) / k
        centers = 4.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape[0] != k:
        raise DatasetError(f"expected {k} centers, got {centers.shape[0]}")
    rng = np.random.default_rng(seed)
    points = np.vstack([c + rng.normal(0.0, noise, (n_per, centers.shape[1])) for c in centers])
    components = np.repeat(np.arange(k), n_per)
    dist = _check_disjoint(points, components, noise, "blobs")
    meta = {"kind": "blobs", "k": k, "n_per": n_per, "noise": noise,
            "centers": centers.tolist(), "min_inter_component_distance": dist}
    return ManifoldDataset(points, components, seed=seed, meta=meta)


def lift_and_rotate(ds: ManifoldDataset, dim: int, seed: int) -> ManifoldDataset:
    """Zero-pad points to ``dim`` dimensions and apply a random rotation.

    The rotation is orthogonal, so all pairwise distances are preserved;
    the lift parameters are recorded in metadata so grids and new points can
    be pushed through the same map later.
    """
    if dim < ds.dim:
        raise ShapeError(f"cannot lift {ds.dim}-D data into {dim} dimensions")
    padded = np.hstack([ds.points, np.zeros((ds.size, dim - ds.dim))])
    rotation = orthogonal_init(dim, dim, seed).data
    meta = dict(ds.meta)
    meta["lift"] = {"dim": dim, "seed": seed, "base_dim": ds.dim}
    return ManifoldDataset(padded @ rotation, ds.components.copy(), seed=ds.seed, meta=meta)


def lift_points(points: np.ndarray, lift_meta: dict) -> np.ndarray:
    """Apply a recorded lift to new points (e.g. a visualization grid)."""
    points = np.asarray(points, dtype=np.float64)
    dim, seed, base = lift_meta["dim"], lift_meta["seed"], lift_meta["base_dim"]
    if points.shape[1] != base:
        raise ShapeError(f"expected {base}-D points for this lift, got {points.shape[1]}-D")
    padded = np.hstack([points, np.zeros((points.shape[0], dim - base))])
    return padded @ orthogonal_init(dim, dim, seed).data


def unlift_points(points: np.ndarray, lift_meta: dict) -> np.ndarray:
    """Invert a recorded lift, recovering the base coordinates."""
    points = np.asarray(points, dtype=np.float64)
    rotation = orthogonal_init(lift_meta["dim"], lift_meta["dim"], lift_meta["seed"]).data
    return (points @ rotation.T)[:, : lift_meta["base_dim"]]


def standardize(ds: ManifoldDataset, mean: np.ndarray | None = None,
                std: np.ndarray | None = None) -> ManifoldDataset:
    """Shift/scale every dimension to zero mean and unit variance.

    Standard deviations are floored at 1e-8, so constant dimensions map to
    zeros.  Pass precomputed ``mean``/``std`` (e.g. from a training split) to
    apply the same affine map to another split; the stats used are stored on
    the result.
    """
    if ds.size < 2 and mean is None:
        raise DatasetError("standardize needs at least 2 points to estimate statistics")
    if mean is None:
        mean = ds.points.mean(axis=0)
        std = np.maximum(ds.points.std(axis=0), STD_FLOOR)
    else:
        mean = np.asarray(mean, dtype=np.float64)
        std = np.maximum(np.asarray(std, dtype=np.float64), STD_FLOOR)
    points = (ds.points - mean) / std
    return ManifoldDataset(points, ds.components.copy(), mean=mean, std=std,
                           seed=ds.seed, meta=dict(ds.meta))


def split(ds: ManifoldDataset, fractions: Sequence[float], seed: int) -> list[ManifoldDataset]:
    """Seeded shuffled partition into len(fractions) disjoint datasets."""
    fr = np.asarray(fractions, dtype=np.float64)
    if np.min(fr) <= 0.0:
        raise DatasetError("fractions must be positive")
    if abs(float(fr.sum()) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must sum to 1, got {float(fr.sum())!r}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.size)
    sizes = np.floor(fr * ds.size).astype(int)
    for i in range(ds.size - int(sizes.sum())):
        sizes[i % len(sizes)] += 1  # distribute the rounding remainder
    out, start = [], 0
    for sz in sizes:
        idx = perm[start:start + sz]
        start += sz
        out.append(ManifoldDataset(ds.points[idx].copy(), ds.components[idx].copy(),
                                   mean=ds.mean, std=ds.std, seed=ds.seed, meta=dict(ds.meta)))
    return out


# --- IDX binary ingestion (big-endian headers, uint8 payload) ---

def load_idx(images_path: str | Path, labels_path: str | Path) -> ManifoldDataset:
    """Load an images/labels IDX pair as flat points scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw = images_path.read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{images_path}: header truncated at byte {len(raw)} (need 16)")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic 0x{magic:08x} at byte 0 "
                          f"(expected 0x{IDX_IMAGES_MAGIC:08x})")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise FormatError(f"{images_path}: expected {expected} bytes, found {len(raw)} "
                          f"(payload starts at byte 16)")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)

    lraw = labels_path.read_bytes()
    if len(lraw) < 8:
        raise FormatError(f"{labels_path}: header truncated at byte {len(lraw)} (need 8)")
    lmagic, lcount = struct.unpack(">II", lraw[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic 0x{lmagic:08x} at byte 0 "
                          f"(expected 0x{IDX_LABELS_MAGIC:08x})")
    if len(lraw) != 8 + lcount:
        raise FormatError(f"{labels_path}: expected {8 + lcount} bytes, found {len(lraw)}")
    if lcount != count:
        raise FormatError(f"label count {lcount} != image count {count} "
                          f"({labels_path} vs {images_path})")
    labels = np.frombuffer(lraw, dtype=np.uint8, offset=8).astype(np.int64)
    meta = {"kind": "idx", "images": str(images_path), "labels": str(labels_path),
            "rows": rows, "cols": cols}
    return ManifoldDataset(images.astype(np.float64) / 255.0, labels, seed=0, meta=meta)


def write_idx(images: np.ndarray, labels: np.ndarray,
              images_path: str | Path, labels_path: str | Path) -> None:
    """Write an (N, rows, cols) uint8 image stack and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ShapeError(f"images must be (N, rows, cols), got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise ShapeError("one label per image required")
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(labels.tobytes())


# --- CSV interchange: header x0,...,x{n-1},component ---

def save_csv(ds: ManifoldDataset, path: str | Path) -> None:
    path = Path(path)
    header = ",".join([f"x{i}" for i in range(ds.dim)] + ["component"])
    lines = [header]
    for row, comp in zip(ds.points, ds.components):
        lines.append(",".join("%.17g" % v for v in row) + f",{comp}")
    path.write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path, meta: dict | None = None) -> ManifoldDataset:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "component":
            raise FormatError(f"{path}: expected header ending in 'component', got {header[-3:]}")
        dim = len(header) - 1
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    if raw.shape[1] != dim + 1:
        raise FormatError(f"{path}: rows have {raw.shape[1]} columns, header implies {dim + 1}")
    return ManifoldDataset(raw[:, :dim], raw[:, dim].astype(np.int64), meta=meta or {})
