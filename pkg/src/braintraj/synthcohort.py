"""Synthetic baseline and longitudinal cohorts with planted ground truth.

The generative model is a verification device, not a claim about MRI: every
edge (tract) has a cohort-level latent vector, and the two modalities are
fixed linear images of that latent plus observation noise. Class membership,
healthy drift and conversion-related deviation all act in latent space, so
every downstream claim has a queryable oracle.

Voxel matrices are synthesised lazily row-by-row from per-row seeded
streams: a full default cohort would occupy tens of GB if materialised, and
per-row streams make any subset reproducible bit-exactly regardless of
query order or parallelism.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .datamodel import (
    EDGE_COUNT, NODE_COUNT, VOXEL_VECTOR_LEN,
    AtlasTopology, canonical_topology, _load_manifest,
)
from .errors import ConfigurationError, LoadError, UnsupportedQueryError, ValidationError

VISIT_COUNT = 4          # baseline, 6, 12, 18 months
VISIT_INTERVAL_YEARS = 0.5
_AGE_RANGE = (60.0, 85.0)
_ABNORMAL_NODE_COUNT = 10
_AGE_COEFF = 0.01        # per year, on the smooth age pattern
_NODE_BASIS_SIZE = 8

# entropy tags keep the independent streams (world / cohort / noise / ages)
# from ever colliding
_WORLD_TAG = 11
_COHORT_TAG = 22
_NOISE_TAG = 33
_AGE_TAG = 44

_KIND_CODES = {"baseline": 1, "longitudinal": 2}
_STREAM_CODES = {("node", "T1"): 1, ("edge", "T1"): 2, ("edge", "FA"): 3}


@dataclass
class SynthConfig:
    seed: int = 0
    latent_dim: int = 8
    noise_std: float = 0.05
    drift_scale: float = 0.1
    class_offset_scale: float = 0.5
    abnormal_edge_count: int = 111
    deviation_scale: float = 0.6
    onset_visit: int = 1
    baseline_cn: int = 113
    baseline_ad: int = 96
    stable_cn: int = 191
    stable_mci: int = 126
    converted_mci: int = 91
    # shared "physics" (modality maps, node patterns): cohorts generated with
    # the same world_seed share one measurement model, so encoders trained
    # on one cohort transfer to another
    world_seed: int = 314159

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        if not (0 <= self.abnormal_edge_count <= EDGE_COUNT):
            raise ConfigurationError(
                f"abnormal_edge_count must be in [0, {EDGE_COUNT}]"
            )
        for name in ("noise_std", "drift_scale", "class_offset_scale", "deviation_scale"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("baseline_cn", "baseline_ad", "stable_cn", "stable_mci",
                     "converted_mci"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not (0 <= self.onset_visit < VISIT_COUNT):
            raise ConfigurationError(
                f"onset_visit must be within the visit grid 0..{VISIT_COUNT - 1}"
            )


@dataclass
class GroundTruth:
    """Queryable generator state for acceptance tests."""

    edge_latents: np.ndarray          # (2227, latent_dim), cohort-shared
    drift_direction: np.ndarray       # (latent_dim,), unit
    deviation_direction: np.ndarray   # (latent_dim,), unit
    abnormal_edges: np.ndarray        # sorted edge indices
    onset_visit: int
    class_offset: np.ndarray          # (latent_dim,), includes the scale


@dataclass
class SubjectRecord:
    subject_id: str
    group: str
    ages: tuple[float, ...]
    conversion_label: bool
    index: int


class _World:
    """Cohort-independent measurement physics derived from world_seed."""

    def __init__(self, world_seed: int, latent_dim: int):
        rng = np.random.default_rng(np.random.SeedSequence((_WORLD_TAG, world_seed, latent_dim)))
        scale = 1.0 / np.sqrt(latent_dim)
        self.a_t1 = rng.standard_normal((VOXEL_VECTOR_LEN, latent_dim)) * scale
        self.a_fa = rng.standard_normal((VOXEL_VECTOR_LEN, latent_dim)) * scale
        self.node_map = rng.standard_normal((VOXEL_VECTOR_LEN, latent_dim)) * scale
        t = np.linspace(0.0, 1.0, VOXEL_VECTOR_LEN)
        basis = np.stack([np.sin(2.0 * np.pi * (k + 1) * t + 0.5 * k)
                          for k in range(_NODE_BASIS_SIZE)])
        r = np.arange(NODE_COUNT)
        coef = np.stack([np.cos(np.pi * (k + 1) * (r + 0.5) / NODE_COUNT)
                         for k in range(_NODE_BASIS_SIZE)], axis=1)
        self.node_patterns = coef @ basis                        # (68, 3000)
        self.age_pattern = np.sin(2.0 * np.pi * 2.5 * t + 1.0)   # (3000,)


class SynthCohort:
    """Lazily evaluated synthetic cohort; implements the voxel-source API."""

    def __init__(self, cfg: SynthConfig, kind: str, subjects: list[SubjectRecord],
                 truth: GroundTruth, world: _World, node_latents: np.ndarray,
                 abnormal_nodes: np.ndarray):
        self.cfg = cfg
        self.kind = kind
        self.subjects = subjects
        self.topology = canonical_topology()
        self._truth = truth
        self._world = world
        self._node_latents = node_latents
        self._abnormal_nodes = abnormal_nodes

    # -- voxel-source protocol -------------------------------------------
    @property
    def visit_count(self) -> int:
        return 1 if self.kind == "baseline" else VISIT_COUNT

    @property
    def has_fa(self) -> bool:
        return True

    def _noise_rows(self, subject_index: int, visit: int, kind: str, modality: str,
                    rows: np.ndarray) -> np.ndarray:
        if self.cfg.noise_std == 0.0:
            return np.zeros((len(rows), VOXEL_VECTOR_LEN), dtype=np.float32)
        code = _STREAM_CODES[(kind, modality)]
        base = (_NOISE_TAG, self.cfg.seed, _KIND_CODES[self.kind],
                subject_index, visit, code)
        out = np.empty((len(rows), VOXEL_VECTOR_LEN), dtype=np.float32)
        for i, r in enumerate(rows):
            rng = np.random.default_rng(np.random.SeedSequence(base + (int(r),)))
            out[i] = rng.standard_normal(VOXEL_VECTOR_LEN, dtype=np.float32)
        out *= np.float32(self.cfg.noise_std)
        return out

    def clean_edge_latents(self, subject_index: int, visit: int) -> np.ndarray:
        """Noise-free per-edge latents of one subject-visit (oracle access)."""
        self._check_visit(visit)
        cfg = self.cfg
        s = self.subjects[subject_index]
        lat = self._truth.edge_latents.copy()
        if self.kind == "baseline":
            if s.group == "AD":
                lat[self._truth.abnormal_edges] += self._truth.class_offset
            return lat
        lat += visit * cfg.drift_scale * self._truth.drift_direction
        if s.group == "convertedMCI" and visit >= self._truth.onset_visit:
            lat[self._truth.abnormal_edges] += (
                cfg.deviation_scale * (visit - self._truth.onset_visit)
                * self._truth.deviation_direction
            )
        return lat

    def _clean_node_latents(self, subject_index: int, visit: int) -> np.ndarray:
        cfg = self.cfg
        s = self.subjects[subject_index]
        lat = self._node_latents.copy()
        if self.kind == "baseline":
            if s.group == "AD":
                lat[self._abnormal_nodes] += self._truth.class_offset
            return lat
        lat += visit * cfg.drift_scale * self._truth.drift_direction
        return lat

    def edge_voxels(self, subject_index: int, visit: int, modality: str,
                    rows: Iterable[int] | None = None) -> np.ndarray:
        """(len(rows), 3000) float32 voxel vectors for the given tracts."""
        self._check_visit(visit)
        if modality not in ("T1", "FA"):
            raise ValidationError(f"unknown modality {modality!r}")
        rows = np.arange(EDGE_COUNT) if rows is None else np.asarray(list(rows), dtype=np.int64)
        lat = self.clean_edge_latents(subject_index, visit)[rows]
        a = self._world.a_t1 if modality == "T1" else self._world.a_fa
        clean = (lat @ a.T).astype(np.float32)
        clean += self._noise_rows(subject_index, visit, "edge", modality, rows)
        return clean

    def node_voxels(self, subject_index: int, visit: int,
                    rows: Iterable[int] | None = None) -> np.ndarray:
        """(len(rows), 3000) float32 voxel vectors for the given regions."""
        self._check_visit(visit)
        rows = np.arange(NODE_COUNT) if rows is None else np.asarray(list(rows), dtype=np.int64)
        s = self.subjects[subject_index]
        lat = self._clean_node_latents(subject_index, visit)[rows]
        out = self._world.node_patterns[rows] + lat @ self._world.node_map.T
        out += s.ages[visit] * _AGE_COEFF * self._world.age_pattern
        out = out.astype(np.float32)
        out += self._noise_rows(subject_index, visit, "node", "T1", rows)
        return out

    def _check_visit(self, visit: int) -> None:
        if not (0 <= visit < self.visit_count):
            raise ValidationError(
                f"visit {visit} outside {self.kind} grid 0..{self.visit_count - 1}"
            )


def _cohort_rng(cfg: SynthConfig, kind: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((_COHORT_TAG, cfg.seed, _KIND_CODES[kind]))
    )


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _make_truth(cfg: SynthConfig, rng: np.random.Generator) -> tuple[GroundTruth, np.ndarray, np.ndarray]:
    edge_latents = rng.standard_normal((EDGE_COUNT, cfg.latent_dim))
    node_latents = rng.standard_normal((NODE_COUNT, cfg.latent_dim))
    drift = _unit(rng, cfg.latent_dim)
    deviation = _unit(rng, cfg.latent_dim)
    class_dir = _unit(rng, cfg.latent_dim)
    abnormal_edges = np.sort(rng.choice(EDGE_COUNT, size=cfg.abnormal_edge_count,
                                        replace=False)) if cfg.abnormal_edge_count else \
        np.empty(0, dtype=np.int64)
    abnormal_nodes = np.sort(rng.choice(NODE_COUNT, size=_ABNORMAL_NODE_COUNT, replace=False))
    truth = GroundTruth(
        edge_latents=edge_latents,
        drift_direction=drift,
        deviation_direction=deviation,
        abnormal_edges=abnormal_edges.astype(np.int64),
        onset_visit=cfg.onset_visit,
        class_offset=cfg.class_offset_scale * class_dir,
    )
    return truth, node_latents, abnormal_nodes


def _subject_ages(cfg: SynthConfig, kind: str, subject_index: int, n_visits: int) -> tuple[float, ...]:
    rng = np.random.default_rng(
        np.random.SeedSequence((_AGE_TAG, cfg.seed, _KIND_CODES[kind], subject_index))
    )
    base = float(rng.uniform(*_AGE_RANGE))
    return tuple(base + v * VISIT_INTERVAL_YEARS for v in range(n_visits))


def gen_baseline_cohort(cfg: SynthConfig) -> tuple[SynthCohort, GroundTruth]:
    """Single-visit AD/CN cohort for network generation and encoder pretraining."""
    cfg.validate()
    if cfg.baseline_cn == 0 or cfg.baseline_ad == 0:
        raise ConfigurationError("baseline cohort requires baseline_cn > 0 and baseline_ad > 0")
    rng = _cohort_rng(cfg, "baseline")
    truth, node_latents, abnormal_nodes = _make_truth(cfg, rng)
    world = _World(cfg.world_seed, cfg.latent_dim)
    subjects = []
    groups = ["CN"] * cfg.baseline_cn + ["AD"] * cfg.baseline_ad
    for i, group in enumerate(groups):
        subjects.append(SubjectRecord(
            subject_id=f"B{i:04d}", group=group,
            ages=_subject_ages(cfg, "baseline", i, 1),
            conversion_label=False, index=i,
        ))
    cohort = SynthCohort(cfg, "baseline", subjects, truth, world, node_latents, abnormal_nodes)
    return cohort, truth


def gen_longitudinal_cohort(cfg: SynthConfig) -> tuple[SynthCohort, GroundTruth]:
    """Four-visit CN / stable-MCI / converted-MCI cohort with planted deviation."""
    cfg.validate()
    if cfg.stable_cn == 0 or cfg.stable_mci == 0 or cfg.converted_mci == 0:
        raise ConfigurationError(
            "longitudinal cohort requires stable_cn, stable_mci and converted_mci all > 0"
        )
    rng = _cohort_rng(cfg, "longitudinal")
    truth, node_latents, abnormal_nodes = _make_truth(cfg, rng)
    world = _World(cfg.world_seed, cfg.latent_dim)
    subjects = []
    groups = (["CN"] * cfg.stable_cn + ["stableMCI"] * cfg.stable_mci
              + ["convertedMCI"] * cfg.converted_mci)
    for i, group in enumerate(groups):
        subjects.append(SubjectRecord(
            subject_id=f"L{i:04d}", group=group,
            ages=_subject_ages(cfg, "longitudinal", i, VISIT_COUNT),
            conversion_label=(group == "convertedMCI"),
            index=i,
        ))
    cohort = SynthCohort(cfg, "longitudinal", subjects, truth, world, node_latents, abnormal_nodes)
    return cohort, truth


def planted_truth(cohort) -> GroundTruth:
    """Ground truth of a synthetic cohort; rejects anything else."""
    if not isinstance(cohort, SynthCohort):
        raise UnsupportedQueryError(
            f"{type(cohort).__name__} carries no planted ground truth"
        )
    return cohort._truth


# ---------------------------------------------------------------------------
# persistence: synthetic cohorts are stored as their config (everything is a
# deterministic function of it), pre-extracted real voxel data as raw blobs
# ---------------------------------------------------------------------------

SOURCE_FORMAT = "braintraj-synth-source"
VOXEL_FORMAT = "braintraj-voxels"


def save_cohort_source(cohort: SynthCohort, path: str | Path) -> dict:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": SOURCE_FORMAT,
        "version": 1,
        "kind": cohort.kind,
        "config": asdict(cohort.cfg),
        "subjects": len(cohort.subjects),
        "visits_per_subject": cohort.visit_count,
    }
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_cohort_source(path: str | Path) -> SynthCohort:
    manifest = _load_manifest(Path(path), SOURCE_FORMAT)
    try:
        cfg = SynthConfig(**manifest["config"])
        kind = manifest["kind"]
    except (KeyError, TypeError) as exc:
        raise LoadError(f"synth source manifest incomplete: {exc}") from exc
    if kind == "baseline":
        cohort, _ = gen_baseline_cohort(cfg)
    elif kind == "longitudinal":
        cohort, _ = gen_longitudinal_cohort(cfg)
    else:
        raise LoadError(f"unknown cohort kind {kind!r}")
    return cohort


def save_voxel_dataset(source, path: str | Path, include_fa: bool = True) -> dict:
    """Materialise a voxel-level dataset (big: ~27 MB per subject-visit-modality)."""
    from .datamodel import write_array

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "arrays").mkdir(exist_ok=True)
    manifest: dict = {
        "format": VOXEL_FORMAT,
        "version": 1,
        "has_fa": bool(include_fa and source.has_fa),
        "topology": {
            "node_labels": list(source.topology.node_labels),
            "edges": source.topology.edges.tolist(),
        },
        "subjects": [],
    }
    for s in source.subjects:
        entry = {"subject_id": s.subject_id, "group": s.group,
                 "conversion_label": s.conversion_label, "visits": []}
        for v in range(source.visit_count):
            arrays = {}
            specs = [("node_t1", source.node_voxels(s.index, v)),
                     ("edge_t1", source.edge_voxels(s.index, v, "T1"))]
            if manifest["has_fa"]:
                specs.append(("edge_fa", source.edge_voxels(s.index, v, "FA")))
            for name, arr in specs:
                rel = f"arrays/{s.subject_id}_{v}_{name}.f32"
                write_array(path / rel, arr)
                arrays[name] = rel
            entry["visits"].append({"visit_index": v, "age": float(s.ages[v]),
                                    "arrays": arrays})
        manifest["subjects"].append(entry)
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return {"path": str(path), "subjects": len(manifest["subjects"])}


class DirVoxelSource:
    """Voxel-source over a materialised on-disk voxel dataset."""

    def __init__(self, path: str | Path):
        from .datamodel import read_array, validate_topology

        self.path = Path(path)
        manifest = _load_manifest(self.path, VOXEL_FORMAT)
        self.topology = AtlasTopology(
            node_labels=tuple(manifest["topology"]["node_labels"]),
            edges=np.asarray(manifest["topology"]["edges"], dtype=np.int64),
        )
        problem = validate_topology(self.topology)
        if problem is not None:
            raise ValidationError(f"voxel dataset topology invalid: {problem}")
        self.has_fa = bool(manifest.get("has_fa", False))
        self._read_array = read_array
        self._entries = manifest["subjects"]
        self.subjects = []
        self.visit_count = max(len(e["visits"]) for e in self._entries) if self._entries else 0
        for i, e in enumerate(self._entries):
            self.subjects.append(SubjectRecord(
                subject_id=e["subject_id"], group=e["group"],
                ages=tuple(float(v["age"]) for v in e["visits"]),
                conversion_label=bool(e["conversion_label"]), index=i,
            ))

    def _arrays(self, subject_index: int, visit: int) -> dict:
        visits = self._entries[subject_index]["visits"]
        for rec in visits:
            if rec["visit_index"] == visit:
                return rec["arrays"]
        raise ValidationError(
            f"subject {self.subjects[subject_index].subject_id} has no visit {visit}"
        )

    def node_voxels(self, subject_index, visit, rows=None):
        arr = self._read_array(self.path / self._arrays(subject_index, visit)["node_t1"],
                               expect_shape=(NODE_COUNT, VOXEL_VECTOR_LEN))
        return arr if rows is None else arr[np.asarray(list(rows))]

    def edge_voxels(self, subject_index, visit, modality, rows=None):
        key = "edge_t1" if modality == "T1" else "edge_fa"
        arrays = self._arrays(subject_index, visit)
        if key not in arrays:
            raise ValidationError(f"dataset has no {modality} edge voxels")
        arr = self._read_array(self.path / arrays[key],
                               expect_shape=(EDGE_COUNT, VOXEL_VECTOR_LEN))
        return arr if rows is None else arr[np.asarray(list(rows))]


def open_voxel_source(path: str | Path):
    """Open either a compact synthetic source or a materialised voxel dataset."""
    mpath = Path(path) / "manifest.json"
    if not mpath.exists():
        raise LoadError(f"no manifest.json under {path}")
    try:
        fmt = json.loads(mpath.read_text()).get("format")
    except ValueError as exc:
        raise LoadError(f"malformed manifest {mpath}: {exc}") from exc
    if fmt == SOURCE_FORMAT:
        return load_cohort_source(path)
    if fmt == VOXEL_FORMAT:
        return DirVoxelSource(path)
    raise LoadError(f"{mpath}: not a voxel source (format {fmt!r})")
