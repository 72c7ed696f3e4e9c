"""Conditioned datasets: the synthetic 2D benchmark and the calorimeter proxy.

A dataset holds aligned condition vectors and samples plus an index that
groups sample indices by (optionally quantized) condition.  Datasets are
written to a single binary file::

    <manifest JSON, UTF-8> 0x00 <conditions f8> <samples> <8-byte checksum>

All numeric payloads are little-endian and row-major.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import (
    ChecksumError,
    InvalidArgumentError,
    MalformedFileError,
    ValidationError,
)

FORMAT_VERSION = 1
GENERATOR_VERSION = "seldiv-data-1"

POINTS2D = "points2d"
CALO = "calo"
KINDS = (POINTS2D, CALO)

N_CLASSES = 9
CLUSTER_SPACING = 40.0
CLUSTER_VARIANCE = {False: 1.0, True: 100.0}

CALO_SHAPE = (44, 44)
CALO_ATTRIBUTES = ("mass", "energy", "charge", "px", "py", "pz", "vx", "vy", "vz")
CALO_UNITS = {
    "mass": "GeV/c^2",
    "energy": "GeV",
    "charge": "e",
    "px": "GeV/c",
    "py": "GeV/c",
    "pz": "GeV/c",
    "vx": "cm",
    "vy": "cm",
    "vz": "cm",
}
# (name, mass, charge)
CALO_SPECIES = (
    ("proton", 0.938272, 1.0),
    ("neutron", 0.939565, 0.0),
    ("pi+", 0.139570, 1.0),
    ("pi-", 0.139570, -1.0),
    ("photon", 0.0, 0.0),
    ("K0L", 0.497611, 0.0),
)
DEFAULT_CALO_PARAMS = {
    "energy_range": [200.0, 2500.0],
    "max_angle": 1.0e-4,
    "distance_cm": 11200.0,
    "pixel_pitch_cm": 0.25,
    "vertex_std_cm": 0.05,
    "photons_per_gev": 0.4,
    "width_range": [1.5, 3.0],
    "n_modes": 4,
    "mode_offset": 12.0,
    "energy_threshold": None,
}

_DTYPES = {"float32": np.dtype("<f4"), "uint32": np.dtype("<u4")}


@dataclass(eq=False)
class ConditionedDataset:
    """Aligned conditions and samples with a condition-key grouping.

    ``conditions`` is an ``(n, d)`` float64 array of raw condition vectors:
    ``(class_id, spread)`` for points, the 9 particle attributes for calo.
    ``samples`` is ``(n, 2)`` float32 for points and ``(n, H, W)`` float32 or
    uint32 for images.
    """

    kind: str
    conditions: np.ndarray
    samples: np.ndarray
    manifest: dict = field(default_factory=dict)
    groups: Optional[Dict[bytes, np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown dataset kind {self.kind!r}")
        if len(self.conditions) != len(self.samples):
            raise InvalidArgumentError(
                f"{len(self.conditions)} conditions but {len(self.samples)} samples"
            )
        if self.conditions.ndim != 2:
            raise InvalidArgumentError("conditions must be a 2-D array")
        dtype_name = {np.dtype("float32"): "float32", np.dtype("uint32"): "uint32"}.get(
            self.samples.dtype
        )
        if dtype_name is None:
            raise InvalidArgumentError(f"unsupported sample dtype {self.samples.dtype}")
        self.manifest = dict(self.manifest)
        self.manifest.update(
            format_version=FORMAT_VERSION,
            kind=self.kind,
            n=len(self.samples),
            shape=list(self.samples.shape[1:]),
            dtype=dtype_name,
        )
        self.manifest.setdefault("seed", None)
        self.manifest.setdefault("q", 0.0)
        self.manifest.setdefault("generator_params", {})

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    @property
    def condition_dim(self) -> int:
        return self.conditions.shape[1]

    @property
    def is_grouped(self) -> bool:
        return self.groups is not None

    @property
    def q(self) -> float:
        return float(self.manifest.get("q", 0.0))

    def key(self, condition) -> bytes:
        return condition_key(condition, self.q)

    def iter_groups(self) -> Iterator[Tuple[bytes, np.ndarray]]:
        if self.groups is None:
            raise InvalidArgumentError("dataset is not grouped")
        return iter(self.groups.items())

    def unique_conditions(self) -> np.ndarray:
        """First condition of every group, in group order."""
        if self.groups is None:
            raise InvalidArgumentError("dataset is not grouped")
        return np.stack([self.conditions[idx[0]] for idx in self.groups.values()])

    def subset(self, indices) -> "ConditionedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        out = ConditionedDataset(
            self.kind,
            self.conditions[indices],
            self.samples[indices],
            self.manifest,
        )
        return group_by_condition(out, self.q) if self.groups is not None else out

    def equals(self, other: "ConditionedDataset") -> bool:
        """Bitwise equality of payloads, conditions and manifest."""
        return (
            self.kind == other.kind
            and self.conditions.dtype == other.conditions.dtype
            and self.samples.dtype == other.samples.dtype
            and self.conditions.shape == other.conditions.shape
            and self.samples.shape == other.samples.shape
            and self.conditions.tobytes() == other.conditions.tobytes()
            and self.samples.tobytes() == other.samples.tobytes()
            and _canonical(self.manifest) == _canonical(other.manifest)
        )


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def condition_key(condition, q: float = 0.0) -> bytes:
    """Byte key of a condition vector; ``q == 0`` means exact bit equality."""
    c = np.asarray(condition, dtype=np.float64)
    if q < 0:
        raise InvalidArgumentError("quantization step must be >= 0")
    if q == 0:
        return np.ascontiguousarray(c, dtype="<f8").tobytes()
    return np.floor(c / q + 0.5).astype("<i8").tobytes()


def _key_matrix(conditions: np.ndarray, q: float) -> np.ndarray:
    if q == 0:
        return np.ascontiguousarray(conditions, dtype="<f8")
    return np.ascontiguousarray(np.floor(conditions / q + 0.5).astype("<i8"))


def group_by_condition(dataset: ConditionedDataset, q: float = 0.0) -> ConditionedDataset:
    """Return a copy of ``dataset`` whose groups partition all indices by key.

    Groups are ordered by the first occurrence of each key.
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot group an empty dataset")
    if q < 0:
        raise InvalidArgumentError("quantization step must be >= 0")
    keys = _key_matrix(dataset.conditions, q)
    rows = keys.view(np.dtype((np.void, keys.dtype.itemsize * keys.shape[1]))).ravel()
    _, first, inverse = np.unique(rows, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first, kind="stable")
    groups: Dict[bytes, np.ndarray] = {}
    sorted_idx = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[sorted_idx], np.arange(len(first) + 1))
    for g in order:
        members = sorted_idx[bounds[g]:bounds[g + 1]]
        groups[keys[members[0]].tobytes()] = members
    manifest = dict(dataset.manifest, q=float(q))
    return dataclasses.replace(dataset, manifest=manifest, groups=groups)


def encode_conditions(kind: str, conditions: np.ndarray) -> np.ndarray:
    """Network-facing encoding of raw conditions.

    Points: 9-way one-hot of the class id followed by the spread flag.
    Calo: raw attributes (standardization happens inside the networks).
    """
    conditions = np.asarray(conditions, dtype=np.float64)
    if kind == POINTS2D:
        cls = conditions[:, 0].astype(np.int64)
        if np.any((cls < 1) | (cls > N_CLASSES)):
            raise InvalidArgumentError("class_id must be in 1..9")
        out = np.zeros((len(conditions), N_CLASSES + 1))
        out[np.arange(len(conditions)), cls - 1] = 1.0
        out[:, N_CLASSES] = conditions[:, 1]
        return out
    if kind == CALO:
        return conditions.copy()
    raise InvalidArgumentError(f"unknown dataset kind {kind!r}")


def cluster_center(class_id: int) -> np.ndarray:
    k = int(class_id) - 1
    return np.array([k % 3, k // 3], dtype=np.float64) * CLUSTER_SPACING


def synthetic_conditions() -> np.ndarray:
    """The 18 (class_id, spread) conditions in canonical order."""
    return np.array(
        [(k, s) for k in range(1, N_CLASSES + 1) for s in (0.0, 1.0)], dtype=np.float64
    )


def make_synthetic_2d(n_per_cluster: int, seed: int) -> ConditionedDataset:
    """Nine Gaussian clusters per spread value on a 3x3 grid.

    Clusters with ``spread=False`` have per-coordinate variance 1, those with
    ``spread=True`` variance 100.
    """
    if int(n_per_cluster) != n_per_cluster or n_per_cluster < 2:
        raise InvalidArgumentError("n_per_cluster must be an integer >= 2")
    n_per_cluster = int(n_per_cluster)
    rng = np.random.default_rng(seed)
    conds, points = [], []
    for cond in synthetic_conditions():
        class_id, spread = int(cond[0]), bool(cond[1])
        std = np.sqrt(CLUSTER_VARIANCE[spread])
        pts = cluster_center(class_id) + std * rng.standard_normal((n_per_cluster, 2))
        points.append(pts)
        conds.append(np.repeat(cond[None, :], n_per_cluster, axis=0))
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": POINTS2D,
        "n": 18 * n_per_cluster,
        "shape": [2],
        "dtype": "float32",
        "seed": int(seed),
        "q": 0.0,
        "generator_version": GENERATOR_VERSION,
        "generator_params": {
            "n_per_cluster": n_per_cluster,
            "cluster_spacing": CLUSTER_SPACING,
            "variance": {"spread0": 1.0, "spread1": 100.0},
        },
        "condition_fields": ["class_id", "spread"],
    }
    ds = ConditionedDataset(
        POINTS2D,
        np.concatenate(conds),
        np.concatenate(points).astype(np.float32),
        manifest,
    )
    return group_by_condition(ds)


def _sample_particles(n: int, rng: np.random.Generator, params: dict) -> np.ndarray:
    species = rng.integers(0, len(CALO_SPECIES), size=n)
    mass = np.array([CALO_SPECIES[s][1] for s in species])
    charge = np.array([CALO_SPECIES[s][2] for s in species])
    e_lo, e_hi = params["energy_range"]
    energy = rng.uniform(e_lo, e_hi, size=n)
    p = np.sqrt(np.maximum(energy**2 - mass**2, 0.0))
    theta = params["max_angle"] * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    px = p * np.sin(theta) * np.cos(phi)
    py = p * np.sin(theta) * np.sin(phi)
    pz = p * np.cos(theta)
    vertex = params["vertex_std_cm"] * rng.standard_normal((n, 3))
    return np.column_stack([mass, energy, charge, px, py, pz, vertex])


def shower_mean(condition: np.ndarray, params: dict, offset=(0.0, 0.0)) -> np.ndarray:
    """Expected photon count per pixel for one particle, before noise."""
    mass, energy, _, px, py, pz, vx, vy, _ = condition
    h, w = CALO_SHAPE
    pitch = params["pixel_pitch_cm"]
    dist = params["distance_cm"]
    # row follows y, column follows x
    row0 = (h - 1) / 2 + (py / pz * dist + vy) / pitch + offset[0]
    col0 = (w - 1) / 2 + (px / pz * dist + vx) / pitch + offset[1]
    e_lo, e_hi = params["energy_range"]
    w_lo, w_hi = params["width_range"]
    width = w_lo + (w_hi - w_lo) * (energy - e_lo) / (e_hi - e_lo) + 0.5 * mass
    total = params["photons_per_gev"] * energy
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    blob = np.exp(-((rows - row0) ** 2 + (cols - col0) ** 2) / (2 * width**2))
    return total * blob / (2 * np.pi * width**2)


def mode_offsets(params: dict) -> np.ndarray:
    m = int(params["n_modes"])
    angles = 2 * np.pi * np.arange(m) / m
    return params["mode_offset"] * np.column_stack([np.sin(angles), np.cos(angles)])


def is_diverse_particle(condition, threshold: float) -> bool:
    return bool(condition[2] != 0 and condition[1] > threshold)


def make_calo_proxy(
    n_particles: int,
    n_repeats: int,
    seed: int,
    params: Optional[dict] = None,
) -> ConditionedDataset:
    """Procedural stand-in for calorimeter responses on a 44x44 grid.

    Each particle yields ``n_repeats`` Poisson-noised Gaussian showers.
    Charged particles above the energy threshold (median sampled energy by
    default) additionally land in one of ``n_modes`` displaced positions per
    repeat.
    """
    if int(n_particles) != n_particles or n_particles < 1:
        raise InvalidArgumentError("n_particles must be an integer >= 1")
    if int(n_repeats) != n_repeats or n_repeats < 2:
        raise InvalidArgumentError("n_repeats must be an integer >= 2")
    n_particles, n_repeats = int(n_particles), int(n_repeats)
    params = {**DEFAULT_CALO_PARAMS, **(params or {})}
    unknown = set(params) - set(DEFAULT_CALO_PARAMS)
    if unknown:
        raise InvalidArgumentError(f"unknown calo parameters: {sorted(unknown)}")

    particles = _sample_particles(n_particles, np.random.default_rng([seed, 0]), params)
    if params["energy_threshold"] is None:
        params["energy_threshold"] = float(np.median(particles[:, 1]))
    threshold = params["energy_threshold"]
    offsets = mode_offsets(params)

    images = np.empty((n_particles * n_repeats,) + CALO_SHAPE, dtype=np.uint32)
    for i, cond in enumerate(particles):
        rng = np.random.default_rng([seed, 1, i])
        diverse = is_diverse_particle(cond, threshold)
        base = None if diverse else shower_mean(cond, params)
        for r in range(n_repeats):
            if diverse:
                mean = shower_mean(cond, params, offsets[rng.integers(len(offsets))])
            else:
                mean = base
            images[i * n_repeats + r] = rng.poisson(mean)

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": CALO,
        "n": n_particles * n_repeats,
        "shape": list(CALO_SHAPE),
        "dtype": "uint32",
        "seed": int(seed),
        "q": 0.0,
        "generator_version": GENERATOR_VERSION,
        "generator_params": dict(params, n_particles=n_particles, n_repeats=n_repeats),
        "condition_fields": list(CALO_ATTRIBUTES),
        "units": CALO_UNITS,
    }
    ds = ConditionedDataset(
        CALO, np.repeat(particles, n_repeats, axis=0), images, manifest
    )
    return group_by_condition(ds)


def diverse_mask(dataset: ConditionedDataset, threshold: Optional[float] = None) -> np.ndarray:
    """Per-sample flag: True where the proxy simulator used the multi-mode regime.

    ``threshold`` defaults to the one recorded by the simulator; pass the real
    dataset's value to classify generated samples.
    """
    if dataset.kind != CALO:
        raise InvalidArgumentError("diverse_mask applies to calo datasets only")
    if threshold is None:
        try:
            threshold = dataset.manifest["generator_params"]["energy_threshold"]
        except KeyError:
            raise InvalidArgumentError("dataset records no energy threshold; pass one") from None
    c = dataset.conditions
    return (c[:, 2] != 0) & (c[:, 1] > threshold)


# -- serialization ---------------------------------------------------------

_REQUIRED_KEYS = ("format_version", "kind", "n", "shape", "dtype", "seed", "q", "generator_params")


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def dataset_checksum(dataset: ConditionedDataset) -> str:
    """Hex digest identifying the dataset contents."""
    return hashlib.blake2b(_encode(dataset), digest_size=16).hexdigest()


def _encode(dataset: ConditionedDataset) -> bytes:
    dtype_name = dataset.manifest["dtype"]
    manifest = dict(dataset.manifest, condition_dim=dataset.condition_dim)
    head = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    body = (
        np.ascontiguousarray(dataset.conditions, dtype="<f8").tobytes()
        + np.ascontiguousarray(dataset.samples, dtype=_DTYPES[dtype_name]).tobytes()
    )
    return head + b"\x00" + body


def save_dataset(dataset: ConditionedDataset, path) -> None:
    blob = _encode(dataset)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.write(_checksum(blob))
    os.replace(tmp, path)


def load_dataset(path) -> ConditionedDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\x00")
    if sep < 0:
        raise MalformedFileError(f"{path}: no manifest separator")
    try:
        manifest = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFileError(f"{path}: unreadable manifest ({exc})") from None
    if not isinstance(manifest, dict) or any(k not in manifest for k in _REQUIRED_KEYS):
        raise MalformedFileError(f"{path}: manifest lacks required keys")
    if manifest["format_version"] != FORMAT_VERSION:
        raise MalformedFileError(f"{path}: unsupported format_version {manifest['format_version']}")
    if manifest["dtype"] not in _DTYPES:
        raise ValidationError(f"{path}: unsupported dtype {manifest['dtype']!r}")
    try:
        n = int(manifest["n"])
        shape = tuple(int(s) for s in manifest["shape"])
        cdim = int(manifest.get("condition_dim", 2 if manifest["kind"] == POINTS2D else 9))
    except (TypeError, ValueError):
        raise MalformedFileError(f"{path}: bad sizes in manifest") from None

    kind = manifest["kind"]
    if kind == POINTS2D and (shape != (2,) or manifest["dtype"] != "float32"):
        raise ValidationError(f"{path}: kind points2d needs float32 samples of shape (2,), got {shape}")
    if kind == CALO and len(shape) != 2:
        raise ValidationError(f"{path}: kind calo needs 2-D image samples, got {shape}")
    if kind not in KINDS:
        raise ValidationError(f"{path}: unknown kind {kind!r}")

    dtype = _DTYPES[manifest["dtype"]]
    n_cond = n * cdim * 8
    n_samp = n * int(np.prod(shape)) * dtype.itemsize
    body = raw[sep + 1:]
    if len(body) != n_cond + n_samp + 8:
        raise MalformedFileError(
            f"{path}: expected {n_cond + n_samp + 8} payload bytes, found {len(body)}"
        )
    if _checksum(raw[:-8]) != raw[-8:]:
        raise ChecksumError(f"{path}: checksum mismatch")
    conditions = np.frombuffer(body, dtype="<f8", count=n * cdim).reshape(n, cdim)
    samples = np.frombuffer(body, dtype=dtype, offset=n_cond, count=n * int(np.prod(shape)))
    manifest.pop("condition_dim", None)
    ds = ConditionedDataset(
        kind,
        conditions.astype(np.float64),
        samples.reshape((n,) + shape).astype(dtype.newbyteorder("=")),
        manifest,
    )
    return group_by_condition(ds, float(manifest["q"])) if n else ds
