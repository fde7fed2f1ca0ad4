"""Dataset boundary: feature containers, manifests, synthetic generation.

A container file holds one clip's precomputed per-segment embeddings for
both modalities (audio rows x d_a, video rows x d_v, f32 LE). A manifest
is a JSON index with sparse multi-label targets. The synthetic generator
produces desk-scale datasets in two flavours: one solvable from audio
alone, and one whose class signal lives only in which audio/video pattern
pair co-occurs at the same relative time, leaving each modality's marginal
distribution identical across classes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import EdgeRules, HeteroGraph, anchor_index, build_hetero_graph
from .tensor import Rng

CONTAINER_MAGIC = b"HGAV"
CONTAINER_VERSION = 1
MANIFEST_VERSION = 1

SYNTH_MODES = ("audio_only_solvable", "fusion_required")
SIGNAL_AMPLITUDE = 2.0
AUDIO_BUMP_WIDTH = 2    # consecutive audio nodes carrying the pattern
VIDEO_BUMP_HALF = 1     # video nodes each side of the aligned anchor
N_BUMP_POSITIONS = 5    # distinct start positions cycled through per class


class DataFormatError(ValueError):
    """A container or manifest file does not match the expected format."""


class DatasetError(ValueError):
    """Dataset-level problem: missing files, inconsistent dims, bad labels."""


# -- feature containers ----------------------------------------------------------


@dataclass
class FeatureContainer:
    audio: np.ndarray   # n_audio x d_a, float32
    video: np.ndarray   # n_video x d_v, float32

    def __post_init__(self):
        self.audio = np.ascontiguousarray(self.audio, dtype=np.float32)
        self.video = np.ascontiguousarray(self.video, dtype=np.float32)
        if self.audio.ndim != 2 or self.video.ndim != 2:
            raise DataFormatError("feature blocks must be 2-D")
        if not np.isfinite(self.audio).all() or not np.isfinite(self.video).all():
            raise DataFormatError("feature blocks must be finite")


def write_container(path, container: FeatureContainer):
    a, v = container.audio, container.video
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        f.write(struct.pack("<5I", CONTAINER_VERSION,
                            a.shape[0], a.shape[1], v.shape[0], v.shape[1]))
        f.write(a.astype("<f4").tobytes())
        f.write(v.astype("<f4").tobytes())


def read_container(path) -> FeatureContainer:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CONTAINER_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}, expected {CONTAINER_MAGIC!r}")
    if len(blob) < 24:
        raise DataFormatError(f"{path}: header truncated at {len(blob)} bytes")
    version, n_audio, d_a, n_video, d_v = struct.unpack("<5I", blob[4:24])
    if version != CONTAINER_VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    expected = 24 + 4 * (n_audio * d_a + n_video * d_v)
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for declared shapes, got {len(blob)}")
    audio = np.frombuffer(blob, dtype="<f4", count=n_audio * d_a,
                          offset=24).reshape(n_audio, d_a).copy()
    video = np.frombuffer(blob, dtype="<f4", count=n_video * d_v,
                          offset=24 + 4 * n_audio * d_a).reshape(n_video, d_v).copy()
    return FeatureContainer(audio=audio, video=video)


# -- manifests --------------------------------------------------------------------


@dataclass
class ManifestItem:
    item_id: str
    container_path: str
    labels: list  # class indices


@dataclass
class DatasetManifest:
    num_classes: int
    class_names: list
    items: list
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "num_classes": self.num_classes,
            "class_names": self.class_names,
            "items": [
                {"id": it.item_id, "container_path": it.container_path,
                 "labels": list(it.labels)}
                for it in self.items
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            items = [ManifestItem(item_id=it["id"], container_path=it["container_path"],
                                  labels=list(it["labels"]))
                     for it in d["items"]]
            manifest = cls(num_classes=int(d["num_classes"]),
                           class_names=list(d["class_names"]),
                           items=items, version=int(d.get("version", MANIFEST_VERSION)))
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"manifest missing or malformed field: {exc}") from exc
        if len(manifest.class_names) != manifest.num_classes:
            raise DataFormatError(
                f"manifest has {len(manifest.class_names)} class names for "
                f"{manifest.num_classes} classes")
        for it in manifest.items:
            for label in it.labels:
                if not 0 <= label < manifest.num_classes:
                    raise DatasetError(
                        f"item {it.item_id!r}: label {label} out of range "
                        f"[0, {manifest.num_classes})")
        return manifest


def write_manifest(path, manifest: DatasetManifest):
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2)


def read_manifest(path) -> DatasetManifest:
    with open(path) as f:
        return DatasetManifest.from_dict(json.load(f))


# -- synthetic data ----------------------------------------------------------------


@dataclass
class SynthSpec:
    """Knobs for the synthetic generators; defaults preserve the 40:100
    audio/video node ratio at desk scale."""

    n_items: int = 80
    n_audio: int = 10
    n_video: int = 25
    d_audio: int = 16
    d_video: int = 32
    n_classes: int = 4
    noise_sigma: float = 0.25
    mode: str = "fusion_required"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_items", "n_audio", "n_video", "d_audio", "d_video", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.mode not in SYNTH_MODES:
            raise ValueError(f"mode must be one of {SYNTH_MODES}, got {self.mode!r}")
        if self.n_items % self.n_classes != 0:
            raise ValueError(
                f"n_items ({self.n_items}) must be a multiple of n_classes "
                f"({self.n_classes}) to keep classes balanced")
        per_class = self.n_items // self.n_classes
        if self.mode == "fusion_required" and per_class % self.n_classes != 0:
            raise ValueError(
                "fusion_required needs items-per-class divisible by n_classes so "
                f"pattern pairs balance out; got {per_class} per class")

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def _cosine_pattern(index: int, dim: int) -> np.ndarray:
    """Orthogonal zero-mean feature template for pattern `index`."""
    j = np.arange(dim)
    return SIGNAL_AMPLITUDE * np.cos(np.pi * (index + 1) * (j + 0.5) / dim)


def _bump_positions(spec: SynthSpec) -> list[int]:
    count = min(N_BUMP_POSITIONS, spec.n_audio)
    stride = max(1, spec.n_audio // count)
    return [(i * stride) % spec.n_audio for i in range(count)]


def _inject(features: np.ndarray, nodes, pattern: np.ndarray):
    for node in nodes:
        features[node % features.shape[0], :] += pattern


def _make_item(spec: SynthSpec, cls: int, j: int, rng: Rng) -> FeatureContainer:
    """Item j of class `cls`. The (audio pattern, start position) sequence is
    the same for every class; only the paired video pattern encodes the class."""
    audio = rng.normal(0.0, spec.noise_sigma, (spec.n_audio, spec.d_audio))
    video = rng.normal(0.0, spec.noise_sigma, (spec.n_video, spec.d_video))
    positions = _bump_positions(spec)
    t = positions[(j // spec.n_classes) % len(positions)]
    audio_nodes = [t + w for w in range(AUDIO_BUMP_WIDTH)]
    anchors = {anchor_index(node % spec.n_audio, spec.n_audio, spec.n_video)
               for node in audio_nodes}
    video_nodes = [a + off for a in anchors
                   for off in range(-VIDEO_BUMP_HALF, VIDEO_BUMP_HALF + 1)]
    if spec.mode == "audio_only_solvable":
        _inject(audio, audio_nodes, _cosine_pattern(cls, spec.d_audio))
    else:
        p = j % spec.n_classes
        q = (cls - p) % spec.n_classes
        _inject(audio, audio_nodes, _cosine_pattern(p, spec.d_audio))
        _inject(video, video_nodes, _cosine_pattern(q, spec.d_video))
    return FeatureContainer(audio=audio.astype(np.float32),
                            video=video.astype(np.float32))


def generate_synthetic(spec: SynthSpec, out_dir) -> Path:
    """Write containers plus manifest.json under out_dir; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = Rng(spec.seed)
    items = []
    for i in range(spec.n_items):
        cls, j = i % spec.n_classes, i // spec.n_classes
        container = _make_item(spec, cls, j, rng)
        item_id = f"synth-{i:04d}"
        filename = f"{item_id}.hgav"
        write_container(out_dir / filename, container)
        items.append(ManifestItem(item_id=item_id, container_path=filename,
                                  labels=[cls]))
    manifest = DatasetManifest(
        num_classes=spec.n_classes,
        class_names=[f"class_{c}" for c in range(spec.n_classes)],
        items=items)
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, manifest)
    return manifest_path


# -- loading -----------------------------------------------------------------------


@dataclass
class LabeledGraph:
    item_id: str
    graph: HeteroGraph
    labels: np.ndarray  # 1 x num_classes, float32

    container: FeatureContainer = field(default=None, repr=False)


def load_dataset(manifest_path, rules: EdgeRules) -> list[LabeledGraph]:
    """Build one labeled HeteroGraph per manifest item.

    All per-item problems are collected and reported together; any problem
    aborts the load (nothing trains on a partially broken dataset).
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    if not manifest.items:
        raise DatasetError(f"{manifest_path}: empty dataset (no items)")
    base = manifest_path.parent
    loaded, errors = [], []
    dims = None
    for it in manifest.items:
        try:
            container = read_container(base / it.container_path)
        except (OSError, DataFormatError) as exc:
            errors.append(f"item {it.item_id!r}: {exc}")
            continue
        item_dims = (container.audio.shape[1], container.video.shape[1])
        if dims is None:
            dims = item_dims
        elif item_dims != dims:
            errors.append(
                f"item {it.item_id!r}: feature dims {item_dims} differ from "
                f"first item {dims}")
            continue
        labels = np.zeros((1, manifest.num_classes), dtype=np.float32)
        labels[0, it.labels] = 1.0
        graph = build_hetero_graph(container.audio, container.video, rules)
        loaded.append(LabeledGraph(item_id=it.item_id, graph=graph, labels=labels,
                                   container=container))
    if errors:
        raise DatasetError(
            f"{manifest_path}: {len(errors)} item(s) failed to load:\n  "
            + "\n  ".join(errors))
    return loaded
