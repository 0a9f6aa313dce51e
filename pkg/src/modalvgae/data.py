"""Graph samples, normalization, target transforms and dataset persistence.

A sample is one truss: node features (512 log-PSD bins followed by the x, y
coordinates), a directed edge list containing both directions of every
member, and the modal targets.  Datasets live in a directory with a
``manifest.json`` plus one binary record per sample (see ``write_record``).
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .response import NodePSDMatrix, log_psd_features
from .truss import ModalSolution, TrussModel, _is_connected
from .util import canonical_json

MAGIC = b"MVGA"
RECORD_VERSION = 1
MANIFEST_VERSION = 1
STD_FLOOR = 1e-8
N_PSD_BINS = 512
SPLIT_NAMES = ("train", "val", "test")


class DatasetFormatError(RuntimeError):
    """Corrupt or incompatible on-disk dataset."""


@dataclass
class GraphSample:
    """One truss as a training graph."""

    features: np.ndarray  # (N, F) float32, log-PSD bins then coordinates
    edges: np.ndarray  # (E2, 2) uint32, closed under reversal
    coords: np.ndarray  # (N, 2) float32
    freqs: np.ndarray  # (M,) float32 Hz
    zetas: np.ndarray  # (M,) float32
    shapes: np.ndarray  # (N, M) float32
    sample_id: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_modes(self) -> int:
        return int(self.freqs.shape[0])

    def validate(self) -> None:
        if self.n_nodes < 4:
            raise ValueError("graph needs at least 4 nodes")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature entries")
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise ValueError("edge list must be (E2, 2)")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValueError("self-loop in edge list")
        if self.edges.max(initial=0) >= self.n_nodes:
            raise ValueError("edge index out of range")
        fwd = {(int(a), int(b)) for a, b in self.edges}
        if any((b, a) not in fwd for a, b in fwd):
            raise ValueError("edge list is not closed under reversal")


def build_graph(
    truss: TrussModel,
    psd: NodePSDMatrix,
    modal: ModalSolution,
    sample_id: int = -1,
    meta: dict | None = None,
) -> GraphSample:
    """Assemble features, bidirectional edges and targets for one truss."""
    n = truss.n_nodes
    if psd.values.shape[0] != n:
        raise ValueError(f"PSD has {psd.values.shape[0]} rows for {n} nodes")
    if modal.shapes.shape[0] != n:
        raise ValueError("mode shapes do not match node count")
    if not _is_connected(n, truss.elements):
        raise ValueError("disconnected graph")

    feats = np.concatenate([log_psd_features(psd.values), truss.nodes], axis=1)
    edges = np.concatenate([truss.elements, truss.elements[:, ::-1]], axis=0)
    sample = GraphSample(
        features=feats.astype(np.float32),
        edges=edges.astype(np.uint32),
        coords=truss.nodes.astype(np.float32),
        freqs=modal.freqs.astype(np.float32),
        zetas=modal.zetas.astype(np.float32),
        shapes=modal.shapes.astype(np.float32),
        sample_id=sample_id,
        meta=dict(meta or {}),
    )
    sample.validate()
    return sample


@dataclass
class NormStats:
    """Per-feature mean/std fitted on the training split only."""

    mean: np.ndarray  # (F,) float64
    std: np.ndarray  # (F,) float64, floored at STD_FLOOR

    @property
    def n_features(self) -> int:
        return int(self.mean.shape[0])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.asarray(d["mean"], float), std=np.asarray(d["std"], float))


def fit_normalization(samples: list[GraphSample]) -> NormStats:
    """Pooled per-feature mean/std over all nodes of the given samples."""
    if not samples:
        raise ValueError("cannot fit normalization on an empty split")
    stacked = np.concatenate([s.features.astype(np.float64) for s in samples], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def apply_normalization(sample: GraphSample, stats: NormStats) -> GraphSample:
    if sample.features.shape[1] != stats.n_features:
        raise ValueError(
            f"stats cover {stats.n_features} features, sample has {sample.features.shape[1]}"
        )
    feats = (sample.features.astype(np.float64) - stats.mean) / stats.std
    return replace(sample, features=feats.astype(np.float32))


@dataclass(frozen=True)
class TargetTransform:
    """Natural-log transform applied to frequencies and damping ratios."""

    kind: str = "log"

    def forward(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if np.any(values <= 0.0):
            raise ValueError("targets must be strictly positive for the log transform")
        return np.log(values)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(values, dtype=np.float64))


def transform_targets(freqs, zetas, transform: TargetTransform = TargetTransform()):
    return transform.forward(freqs), transform.forward(zetas)


def inverse_transform_targets(log_f, log_z, transform: TargetTransform = TargetTransform()):
    return transform.inverse(log_f), transform.inverse(log_z)


def mask_sensors(sample: GraphSample, fraction: float, seed: int) -> GraphSample:
    """Keep PSD features on a random node subset, zero-fill the rest.

    Appends an observed-flag column (1.0 observed, 0.0 masked); edges,
    coordinates and targets are untouched.  Intended for samples that are
    already normalized, so the fill value 0 is the feature mean.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = sample.n_nodes
    n_obs = max(1, math.ceil(fraction * n))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x6D736B]))
    observed = np.zeros(n, dtype=bool)
    observed[rng.choice(n, size=n_obs, replace=False)] = True

    n_psd = sample.features.shape[1] - 2
    feats = sample.features.copy()
    feats[~observed, :n_psd] = 0.0
    flags = observed.astype(np.float32)[:, None]
    return replace(sample, features=np.concatenate([feats, flags], axis=1))


@dataclass
class DatasetManifest:
    """Dataset-level metadata: splits, normalization, generation provenance."""

    n_total: int
    splits: dict[str, list[int]]
    n_modes: int
    feature_dim: int
    config_digest: str
    generation: dict = field(default_factory=dict)
    norm_stats: NormStats | None = None
    target_transform: str = "log"
    schema_version: int = MANIFEST_VERSION

    def validate(self) -> None:
        ids = [i for name in SPLIT_NAMES for i in self.splits.get(name, [])]
        if len(ids) != len(set(ids)):
            raise ValueError("split ids overlap")
        if len(ids) != self.n_total:
            raise ValueError("split union does not cover all sample ids")
        if self.norm_stats is not None and self.norm_stats.n_features != self.feature_dim:
            raise ValueError("normalization stats do not match feature dimension")

    def all_ids(self) -> list[int]:
        return sorted(i for name in SPLIT_NAMES for i in self.splits.get(name, []))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "n_total": self.n_total,
            "splits": {k: list(map(int, v)) for k, v in self.splits.items()},
            "n_modes": self.n_modes,
            "feature_dim": self.feature_dim,
            "config_digest": self.config_digest,
            "generation": self.generation,
            "norm_stats": None if self.norm_stats is None else self.norm_stats.to_dict(),
            "target_transform": self.target_transform,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("schema_version") != MANIFEST_VERSION:
            raise DatasetFormatError(
                f"manifest schema {d.get('schema_version')} != {MANIFEST_VERSION}"
            )
        stats = d.get("norm_stats")
        return cls(
            n_total=int(d["n_total"]),
            splits={k: [int(i) for i in v] for k, v in d["splits"].items()},
            n_modes=int(d["n_modes"]),
            feature_dim=int(d["feature_dim"]),
            config_digest=str(d["config_digest"]),
            generation=d.get("generation", {}),
            norm_stats=None if stats is None else NormStats.from_dict(stats),
            target_transform=str(d.get("target_transform", "log")),
        )


def record_path(root: Path, sample_id: int) -> Path:
    return Path(root) / f"graph_{int(sample_id)}.bin"


def write_record(path: Path, sample: GraphSample) -> None:
    """Binary record: MVGA magic, version, [N E2 F M] header, arrays, CRC32."""
    n, f_dim = sample.features.shape
    e2 = sample.edges.shape[0]
    m = sample.n_modes
    payload = struct.pack("<4I", n, e2, f_dim, m)
    payload += np.ascontiguousarray(sample.coords, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(sample.edges, dtype="<u4").tobytes()
    payload += np.ascontiguousarray(sample.features, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(sample.freqs, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(sample.zetas, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(sample.shapes, dtype="<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", RECORD_VERSION) + payload + struct.pack("<I", crc))


def read_record(path: Path, sample_id: int = -1, meta: dict | None = None) -> GraphSample:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != RECORD_VERSION:
        raise DatasetFormatError(f"{path}: record version {version} != {RECORD_VERSION}")
    payload, tail = raw[8:-4], raw[-4:]
    if len(payload) < 16:
        raise DatasetFormatError(f"{path}: truncated record")
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise DatasetFormatError(f"{path}: CRC mismatch")
    n, e2, f_dim, m = struct.unpack_from("<4I", payload, 0)
    expected = 16 + 4 * (n * 2 + e2 * 2 + n * f_dim + m + m + n * m)
    if len(payload) != expected:
        raise DatasetFormatError(f"{path}: payload length {len(payload)} != {expected}")

    off = 16

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=off).copy()
        off += count * 4
        return arr

    coords = take(n * 2, "<f4").reshape(n, 2)
    edges = take(e2 * 2, "<u4").reshape(e2, 2)
    feats = take(n * f_dim, "<f4").reshape(n, f_dim)
    freqs = take(m, "<f4")
    zetas = take(m, "<f4")
    shapes = take(n * m, "<f4").reshape(n, m)
    return GraphSample(
        features=feats,
        edges=edges,
        coords=coords,
        freqs=freqs,
        zetas=zetas,
        shapes=shapes,
        sample_id=sample_id,
        meta=dict(meta or {}),
    )


def write_dataset(samples: list[GraphSample], manifest: DatasetManifest, path) -> None:
    manifest.validate()
    if sorted(s.sample_id for s in samples) != manifest.all_ids():
        raise ValueError("manifest ids do not match the provided samples")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    for s in samples:
        write_record(record_path(root, s.sample_id), s)


def read_manifest(path) -> DatasetManifest:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError(f"{root}: no manifest.json")
    manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
    manifest.validate()
    return manifest


def read_dataset(path, split: str | None = None) -> tuple[list[GraphSample], DatasetManifest]:
    """Load a dataset directory (optionally a single split), validated."""
    root = Path(path)
    manifest = read_manifest(root)
    master_seed = manifest.generation.get("seed")
    ids = manifest.all_ids() if split is None else sorted(manifest.splits[split])
    samples = [
        read_record(record_path(root, i), sample_id=i, meta={"seed": master_seed, "truss_index": i})
        for i in ids
    ]
    return samples, manifest


def manifest_digest(manifest: DatasetManifest) -> str:
    from .util import digest

    return digest(manifest.to_dict())


__all__ = [
    "GraphSample",
    "NormStats",
    "TargetTransform",
    "DatasetManifest",
    "DatasetFormatError",
    "build_graph",
    "fit_normalization",
    "apply_normalization",
    "transform_targets",
    "inverse_transform_targets",
    "mask_sensors",
    "write_dataset",
    "read_dataset",
    "read_manifest",
    "write_record",
    "read_record",
    "record_path",
    "canonical_json",
]
