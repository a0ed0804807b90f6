"""Labeled datasets and their CSV + sidecar file format.

CSV layout: header ``k,h_0,...,h_{D-1},p_0,...,p_{K-1}`` where ``k`` is the
sample index and the gains are flattened row-major (receiver-major for IC,
user-major for IMAC). The sidecar ``<csv>.meta`` holds ``key=value`` lines.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .instance import IC, IMAC, ProblemInstance, effective_channels

FLOAT_FMT = "%.17g"


@dataclass
class Dataset:
    kind: str
    gains: np.ndarray
    labels: np.ndarray
    noise_power: np.ndarray
    weights: np.ndarray
    p_max: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n, K = self.labels.shape
        if len(self.gains) != n:
            raise ValueError("gains and labels differ in length")
        self.noise_power = np.broadcast_to(np.asarray(self.noise_power, dtype=np.float64), (n, K))
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=np.float64), (n, K))
        if np.any(self.labels < 0) or np.any(self.labels > self.p_max * (1 + 1e-12)):
            raise ValueError("labels violate the power box constraint")

    def __len__(self):
        return len(self.labels)

    @property
    def num_users(self) -> int:
        return self.labels.shape[1]

    @property
    def num_cells(self) -> int | None:
        return self.gains.shape[-1] if self.kind == IMAC else None

    @property
    def instances(self) -> list[ProblemInstance]:
        return [self.instance(i) for i in range(len(self))]

    def instance(self, i) -> ProblemInstance:
        return ProblemInstance(self.kind, self.gains[i], self.noise_power[i], self.weights[i], self.p_max)

    def features(self) -> np.ndarray:
        return self.gains.reshape(len(self), -1)

    def channels(self) -> np.ndarray:
        return effective_channels(self.kind, self.gains)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.kind, self.gains[idx], self.labels[idx], self.noise_power[idx],
                       self.weights[idx], self.p_max, dict(self.meta))


def _uniform(arr, name):
    flat = np.unique(np.asarray(arr))
    if flat.size != 1:
        raise ValueError(f"CSV format requires a common {name} across samples")
    return repr(float(flat[0]))


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    X = ds.features()
    K = ds.num_users
    header = ",".join(["k"] + [f"h_{i}" for i in range(X.shape[1])] + [f"p_{i}" for i in range(K)])
    body = np.column_stack([np.arange(len(ds)), X, ds.labels])
    fmt = ["%d"] + [FLOAT_FMT] * (body.shape[1] - 1)
    np.savetxt(path, body, fmt=fmt, delimiter=",", header=header, comments="", encoding="utf-8")

    meta = {
        "kind": ds.kind,
        "K": K,
        "N": ds.num_cells if ds.kind == IMAC else K,
        "n": len(ds),
        "p_max": repr(float(ds.p_max)),
        "noise_power": _uniform(ds.noise_power, "noise power"),
        "weights": _uniform(ds.weights, "weight"),
    }
    for key, value in ds.meta.items():
        meta.setdefault(key, value)
    lines = [f"{k}={v}" for k, v in meta.items()]
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = read_meta(str(path) + ".meta")
    kind = meta["kind"]
    K, N = int(meta["K"]), int(meta["N"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    D = K * K if kind == IC else K * N
    if data.shape[1] != 1 + D + K:
        raise ValueError(f"{path}: expected {1 + D + K} columns, found {data.shape[1]}")
    gains = data[:, 1:1 + D].reshape(len(data), K, -1)
    extra = {k: v for k, v in meta.items() if k not in {"kind", "K", "N", "n", "p_max", "noise_power", "weights"}}
    return Dataset(kind, gains, data[:, 1 + D:], float(meta["noise_power"]),
                   float(meta["weights"]), float(meta["p_max"]), extra)
