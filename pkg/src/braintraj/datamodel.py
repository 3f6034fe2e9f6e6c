"""Shared domain types, their invariants, and the on-disk dataset format.

The persistence format is deliberately dumb: a ``manifest.json`` plus one raw
little-endian float32 blob per array, each with a JSON sidecar giving shape
and dtype. It is language neutral, bit exact, and trivially diffable.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import LoadError, ValidationError

NODE_COUNT = 68
EDGE_COUNT = 2227
NODE_FEATURE_DIM = 32
EDGE_FEATURE_DIM = 32
GRAPH_FEATURE_DIM = 256
VOXEL_VECTOR_LEN = 3000

GROUPS = ("CN", "stableMCI", "convertedMCI", "AD")
MODALITIES = ("T1", "FA")

ARRAY_DTYPE = "<f4"
SIDECAR_SUFFIX = ".shape.json"

# 34 Desikan cortical parcels, mirrored over both hemispheres -> 68 regions.
_DESIKAN_34 = (
    "bankssts", "caudalanteriorcingulate", "caudalmiddlefrontal", "cuneus",
    "entorhinal", "frontalpole", "fusiform", "inferiorparietal",
    "inferiortemporal", "insula", "isthmuscingulate", "lateraloccipital",
    "lateralorbitofrontal", "lingual", "medialorbitofrontal", "middletemporal",
    "paracentral", "parahippocampal", "parsopercularis", "parsorbitalis",
    "parstriangularis", "pericalcarine", "postcentral", "posteriorcingulate",
    "precentral", "precuneus", "rostralanteriorcingulate",
    "rostralmiddlefrontal", "superiorfrontal", "superiorparietal",
    "superiortemporal", "supramarginal", "temporalpole", "transversetemporal",
)
REGION_LABELS = tuple(f"{hemi}-{name}" for hemi in ("lh", "rh") for name in _DESIKAN_34)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(eq=False)
class AtlasTopology:
    """Fixed graph skeleton: 68 labelled regions, 2227 undirected tracts.

    ``edges`` is an (E, 2) int array with u < v; its row order is frozen at
    creation and persisted, and every edge-feature matrix indexes by it.
    """

    node_labels: tuple[str, ...]
    edges: np.ndarray

    def __post_init__(self):
        self.node_labels = tuple(str(x) for x in self.node_labels)
        self.edges = _readonly(np.asarray(self.edges, dtype=np.int64))

    @property
    def node_count(self) -> int:
        return len(self.node_labels)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def same_as(self, other: "AtlasTopology") -> bool:
        return (
            self.node_labels == other.node_labels
            and self.edges.shape == other.edges.shape
            and bool(np.array_equal(self.edges, other.edges))
        )


def validate_topology(t: AtlasTopology) -> str | None:
    """Return the first violated topology invariant, or None when valid."""
    if t.node_count != NODE_COUNT:
        return f"expected exactly {NODE_COUNT} nodes, got {t.node_count}"
    if t.edges.ndim != 2 or t.edges.shape[1] != 2:
        return f"edge array must be (E, 2), got {t.edges.shape}"
    if t.edge_count != EDGE_COUNT:
        return f"expected exactly {EDGE_COUNT} edges, got {t.edge_count}"
    u, v = t.edges[:, 0], t.edges[:, 1]
    if (u < 0).any() or (v >= NODE_COUNT).any() or (u >= NODE_COUNT).any() or (v < 0).any():
        bad = int(np.argmax((u < 0) | (v >= NODE_COUNT) | (u >= NODE_COUNT) | (v < 0)))
        return f"edge {bad} has endpoint out of range: {tuple(t.edges[bad])}"
    if (u >= v).any():
        bad = int(np.argmax(u >= v))
        return f"edge {bad} non-canonical ordering (needs u < v): {tuple(t.edges[bad])}"
    keys = u * NODE_COUNT + v
    uniq, counts = np.unique(keys, return_counts=True)
    if (counts > 1).any():
        dupkey = int(uniq[np.argmax(counts > 1)])
        return f"duplicate edge ({dupkey // NODE_COUNT}, {dupkey % NODE_COUNT})"
    return None


_CANONICAL_TOPOLOGY_SEED = 68_2227


def canonical_topology() -> AtlasTopology:
    """The shared 68-node / 2227-edge skeleton used by every cohort.

    68 regions admit 2278 unordered pairs; a fixed seeded draw removes 51 of
    them so the skeleton is reproducible across runs and processes.
    """
    n = NODE_COUNT
    pairs = np.array([(u, v) for u in range(n) for v in range(u + 1, n)], dtype=np.int64)
    rng = np.random.default_rng(_CANONICAL_TOPOLOGY_SEED)
    drop = rng.choice(len(pairs), size=len(pairs) - EDGE_COUNT, replace=False)
    keep = np.ones(len(pairs), dtype=bool)
    keep[drop] = False
    topo = AtlasTopology(node_labels=REGION_LABELS, edges=pairs[keep])
    problem = validate_topology(topo)
    if problem is not None:
        raise ValidationError(f"canonical topology broken: {problem}")
    return topo


@dataclass(eq=False)
class VoxelVector:
    """A single 3000-long voxel intensity vector for one region or tract."""

    values: np.ndarray
    modality: str
    kind: str
    index: int

    def __post_init__(self):
        self.values = _readonly(np.asarray(self.values, dtype=np.float32))

    def validate(self) -> None:
        if self.values.shape != (VOXEL_VECTOR_LEN,):
            raise ValidationError(
                f"voxel vector must have length {VOXEL_VECTOR_LEN}, got {self.values.shape}"
            )
        if not np.isfinite(self.values).all():
            raise ValidationError("voxel vector contains non-finite values")
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if self.kind not in ("node", "edge"):
            raise ValidationError(f"unknown voxel kind {self.kind!r}")


@dataclass(eq=False)
class BrainNetwork:
    """Per-subject, per-visit graph with 68x32 node and 2227x32 edge features."""

    topology: AtlasTopology
    node_features: np.ndarray
    edge_features: np.ndarray
    subject_id: str
    visit: int

    def __post_init__(self):
        self.node_features = _readonly(np.asarray(self.node_features, dtype=np.float32))
        self.edge_features = _readonly(np.asarray(self.edge_features, dtype=np.float32))
        self.visit = int(self.visit)

    def validate(self) -> None:
        problem = validate_topology(self.topology)
        if problem is not None:
            raise ValidationError(f"network topology invalid: {problem}")
        if self.node_features.shape != (NODE_COUNT, NODE_FEATURE_DIM):
            raise ValidationError(
                f"node_features must be {NODE_COUNT}x{NODE_FEATURE_DIM}, "
                f"got {self.node_features.shape}"
            )
        if self.edge_features.shape != (EDGE_COUNT, EDGE_FEATURE_DIM):
            raise ValidationError(
                f"edge_features must be {EDGE_COUNT}x{EDGE_FEATURE_DIM}, "
                f"got {self.edge_features.shape}"
            )
        if not np.isfinite(self.node_features).all():
            raise ValidationError("node_features contain non-finite values")
        if not np.isfinite(self.edge_features).all():
            raise ValidationError("edge_features contain non-finite values")
        if self.visit < 0:
            raise ValidationError(f"visit index must be >= 0, got {self.visit}")


@dataclass(eq=False)
class Visit:
    visit_index: int
    age: float
    network: BrainNetwork


@dataclass(eq=False)
class LongitudinalSubject:
    """Ordered visits of one subject plus group label and conversion outcome."""

    subject_id: str
    group: str
    visits: tuple[Visit, ...]
    conversion_label: bool

    def __post_init__(self):
        self.visits = tuple(self.visits)
        self.conversion_label = bool(self.conversion_label)

    def validate(self) -> None:
        if self.group not in GROUPS:
            raise ValidationError(f"unknown group {self.group!r} for {self.subject_id}")
        if not self.visits:
            raise ValidationError(f"subject {self.subject_id} has no visits")
        idx = [v.visit_index for v in self.visits]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(
                f"subject {self.subject_id}: visit_index must be strictly increasing, got {idx}"
            )
        ages = [v.age for v in self.visits]
        if any(not math.isfinite(a) for a in ages):
            raise ValidationError(f"subject {self.subject_id}: non-finite age")
        if any(b < a for a, b in zip(ages, ages[1:])):
            raise ValidationError(
                f"subject {self.subject_id}: ages must be non-decreasing, got {ages}"
            )
        if self.conversion_label and self.group != "convertedMCI":
            raise ValidationError(
                f"subject {self.subject_id}: conversion_label only valid for convertedMCI"
            )
        for v in self.visits:
            if v.visit_index != v.network.visit:
                raise ValidationError(
                    f"subject {self.subject_id}: visit {v.visit_index} carries a network "
                    f"tagged visit {v.network.visit}"
                )
            v.network.validate()


@dataclass(eq=False)
class GraphFeature:
    """256-wide encoded representation of one brain network."""

    values: np.ndarray
    source: tuple[str, int]

    def __post_init__(self):
        self.values = _readonly(np.asarray(self.values, dtype=np.float32))

    def validate(self) -> None:
        if self.values.shape != (GRAPH_FEATURE_DIM,):
            raise ValidationError(
                f"graph feature must have length {GRAPH_FEATURE_DIM}, got {self.values.shape}"
            )
        if not np.isfinite(self.values).all():
            raise ValidationError("graph feature contains non-finite values")


@dataclass(eq=False)
class ResidualSequence:
    """Ordered residuals between actual and trajectory-predicted features."""

    residuals: np.ndarray  # (T, 256)
    visit_indices: tuple[int, ...]

    def __post_init__(self):
        self.residuals = _readonly(np.asarray(self.residuals, dtype=np.float32))
        self.visit_indices = tuple(int(i) for i in self.visit_indices)

    def __len__(self) -> int:
        return int(self.residuals.shape[0])

    def validate(self) -> None:
        if self.residuals.ndim != 2 or self.residuals.shape[1] != GRAPH_FEATURE_DIM:
            raise ValidationError(
                f"residuals must be (T, {GRAPH_FEATURE_DIM}), got {self.residuals.shape}"
            )
        if self.residuals.shape[0] < 1:
            raise ValidationError("residual sequence must contain at least one residual")
        if len(self.visit_indices) != self.residuals.shape[0]:
            raise ValidationError("visit_indices length does not match residuals")
        if not np.isfinite(self.residuals).all():
            raise ValidationError("residual sequence contains non-finite values")


# ---------------------------------------------------------------------------
# raw array blobs
# ---------------------------------------------------------------------------

def write_array(path: str | Path, arr: np.ndarray) -> None:
    """Write one blob (little-endian float32, row-major) plus its sidecar."""
    path = Path(path)
    a = np.ascontiguousarray(arr, dtype=ARRAY_DTYPE)
    if not np.isfinite(a).all():
        raise ValidationError(f"refusing to write non-finite array to {path.name}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(a.tobytes())
    sidecar = {"shape": list(a.shape), "dtype": ARRAY_DTYPE}
    with open(str(path) + SIDECAR_SUFFIX, "w") as f:
        json.dump(sidecar, f)


def read_array(path: str | Path, expect_shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Read one blob, validating sidecar shape, byte count and finiteness."""
    path = Path(path)
    sidecar_path = Path(str(path) + SIDECAR_SUFFIX)
    if not path.exists():
        raise LoadError(f"missing array blob: {path}")
    if not sidecar_path.exists():
        raise LoadError(f"missing sidecar: {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text())
        shape = tuple(int(s) for s in sidecar["shape"])
        dtype = sidecar["dtype"]
    except (ValueError, KeyError, TypeError) as exc:
        raise LoadError(f"unreadable sidecar {sidecar_path}: {exc}") from exc
    if dtype != ARRAY_DTYPE:
        raise ValidationError(f"{path.name}: unsupported dtype {dtype!r}")
    if expect_shape is not None and shape != tuple(expect_shape):
        raise ValidationError(
            f"{path.name}: sidecar declares shape {shape}, expected {tuple(expect_shape)}"
        )
    raw = path.read_bytes()
    expected_bytes = int(np.prod(shape)) * 4
    if len(raw) != expected_bytes:
        raise LoadError(
            f"corrupt blob {path}: {len(raw)} bytes on disk, sidecar implies {expected_bytes}"
        )
    arr = np.frombuffer(raw, dtype=ARRAY_DTYPE).reshape(shape).copy()
    if not np.isfinite(arr).all():
        raise ValidationError(f"{path.name}: blob contains NaN/Inf")
    return arr


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

DATASET_FORMAT = "braintraj-dataset"
DATASET_VERSION = 1


def _array_name(subject_id: str, visit: int, name: str) -> str:
    return f"{subject_id}_{visit}_{name}.f32"


def save_dataset(subjects: Sequence[LongitudinalSubject], path: str | Path) -> dict:
    """Persist a cohort to ``path``; returns a manifest summary.

    All subjects must share one topology, which is stored inline in the
    manifest so the dataset is self-describing.
    """
    path = Path(path)
    subjects = list(subjects)
    for s in subjects:
        s.validate()
    topo = subjects[0].visits[0].network.topology if subjects else canonical_topology()
    for s in subjects:
        for v in s.visits:
            if not v.network.topology.same_as(topo):
                raise ValidationError(
                    f"subject {s.subject_id} visit {v.visit_index} uses a different topology"
                )
    try:
        path.mkdir(parents=True, exist_ok=True)
        (path / "arrays").mkdir(exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"dataset path not writable: {path} ({exc})") from exc

    manifest: dict = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "topology": {
            "node_labels": list(topo.node_labels),
            "edges": topo.edges.tolist(),
        },
        "subjects": [],
    }
    n_arrays = 0
    for s in subjects:
        entry = {
            "subject_id": s.subject_id,
            "group": s.group,
            "conversion_label": s.conversion_label,
            "visits": [],
        }
        for v in s.visits:
            rec = {"visit_index": v.visit_index, "age": float(v.age), "arrays": {}}
            for name, arr in (
                ("node_features", v.network.node_features),
                ("edge_features", v.network.edge_features),
            ):
                rel = os.path.join("arrays", _array_name(s.subject_id, v.visit_index, name))
                write_array(path / rel, arr)
                rec["arrays"][name] = rel
                n_arrays += 1
            entry["visits"].append(rec)
        manifest["subjects"].append(entry)

    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return {
        "path": str(path),
        "subjects": len(subjects),
        "networks": sum(len(s.visits) for s in subjects),
        "arrays": n_arrays,
    }


def _load_manifest(path: Path, expected_format: str) -> dict:
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise LoadError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except ValueError as exc:
        raise LoadError(f"malformed manifest {mpath}: {exc}") from exc
    if manifest.get("format") != expected_format:
        raise LoadError(
            f"{mpath}: format {manifest.get('format')!r}, expected {expected_format!r}"
        )
    return manifest


def load_dataset(path: str | Path) -> list[LongitudinalSubject]:
    """Load a cohort saved by :func:`save_dataset`, re-validating everything."""
    path = Path(path)
    manifest = _load_manifest(path, DATASET_FORMAT)
    try:
        topo = AtlasTopology(
            node_labels=tuple(manifest["topology"]["node_labels"]),
            edges=np.asarray(manifest["topology"]["edges"], dtype=np.int64),
        )
        subject_entries = manifest["subjects"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"manifest missing required fields: {exc}") from exc
    problem = validate_topology(topo)
    if problem is not None:
        raise ValidationError(f"stored topology invalid: {problem}")

    subjects = []
    for entry in subject_entries:
        visits = []
        for rec in entry["visits"]:
            vidx = int(rec["visit_index"])
            node = read_array(path / rec["arrays"]["node_features"],
                              expect_shape=(NODE_COUNT, NODE_FEATURE_DIM))
            edge = read_array(path / rec["arrays"]["edge_features"],
                              expect_shape=(EDGE_COUNT, EDGE_FEATURE_DIM))
            net = BrainNetwork(
                topology=topo, node_features=node, edge_features=edge,
                subject_id=entry["subject_id"], visit=vidx,
            )
            visits.append(Visit(visit_index=vidx, age=float(rec["age"]), network=net))
        subj = LongitudinalSubject(
            subject_id=entry["subject_id"],
            group=entry["group"],
            visits=tuple(visits),
            conversion_label=bool(entry["conversion_label"]),
        )
        subj.validate()
        subjects.append(subj)
    return subjects
