"""Heterogeneous graph construction over audio and video segment sequences.

Nodes are time-ordered segments per modality. Within a modality, each node
links to neighbours at strides of `dilation`, up to `span` of them per
direction. Across modalities, each audio node is anchored to the video
node at the proportional position in time and linked to a dilated window
around that anchor. Intra-modality adjacencies are symmetrically
normalized with self-loops; the cross-modal adjacency stays a binary mask
(attention normalizes it later).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class EdgeRule:
    """Temporal connectivity rule: `span` neighbours per direction, `dilation` stride."""

    span: int
    dilation: int = 1

    def __post_init__(self):
        if self.span < 0:
            raise ValueError(f"span must be >= 0, got {self.span}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")


@dataclass(frozen=True)
class EdgeRules:
    """The three rules governing graph construction (six hyperparameters)."""

    audio: EdgeRule
    video: EdgeRule
    cross: EdgeRule

    @classmethod
    def default(cls) -> "EdgeRules":
        return cls(audio=EdgeRule(6, 3), video=EdgeRule(4, 4), cross=EdgeRule(3, 1))


@dataclass
class HeteroGraph:
    """One audio-visual clip as a two-modality graph.

    adj_aa / adj_vv are the normalized intra-modality adjacencies; adj_va
    is the raw 0/1 video-to-audio mask with shape (n_audio, n_video).
    """

    audio_feats: Tensor
    video_feats: Tensor
    adj_aa: Tensor
    adj_vv: Tensor
    adj_va: np.ndarray

    @property
    def n_audio(self) -> int:
        return self.audio_feats.rows

    @property
    def n_video(self) -> int:
        return self.video_feats.rows


def temporal_edges(n_nodes: int, rule: EdgeRule) -> np.ndarray:
    """Symmetric binary adjacency linking i to i +/- dilation*k, k = 1..span.

    Out-of-range targets are dropped; no self-loops are added here.
    """
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    adj = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    for i in range(n_nodes):
        for k in range(1, rule.span + 1):
            j = i + rule.dilation * k
            if j < n_nodes:
                adj[i, j] = 1.0
                adj[j, i] = 1.0
    return adj


def anchor_index(i: int, n_audio: int, n_video: int) -> int:
    """Proportional audio-to-video index map, rounded half-up."""
    if n_audio == 1:
        return 0
    return int(np.floor(i * (n_video - 1) / (n_audio - 1) + 0.5))


def cross_modal_edges(n_audio: int, n_video: int, rule: EdgeRule) -> np.ndarray:
    """Binary (n_audio, n_video) mask; row i holds audio node i's video neighbours.

    Each audio node connects to video nodes anchor(i) + dilation*k for
    k in [-span, span] (the anchor itself included), clipped to range.
    """
    if n_audio < 1 or n_video < 1:
        raise ValueError(f"node counts must be >= 1, got ({n_audio}, {n_video})")
    adj = np.zeros((n_audio, n_video), dtype=np.float64)
    for i in range(n_audio):
        c = anchor_index(i, n_audio, n_video)
        for k in range(-rule.span, rule.span + 1):
            j = c + rule.dilation * k
            if 0 <= j < n_video:
                adj[i, j] = 1.0
    return adj


def normalize_adjacency(adj: np.ndarray, dtype=np.float32) -> Tensor:
    """Symmetric normalization with self-loops: D~^-1/2 (A + I) D~^-1/2.

    D~ is the degree matrix of A + I, so isolated nodes come out with a
    unit self-loop entry.
    """
    adj = np.asarray(adj, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ShapeError("adjacency must be symmetric")
    a_tilde = adj + np.eye(adj.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    normalized = a_tilde * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]
    return Tensor(normalized.astype(dtype))


def build_hetero_graph(audio_feats, video_feats, rules: EdgeRules) -> HeteroGraph:
    """Assemble a HeteroGraph from per-segment feature matrices."""
    a = audio_feats if isinstance(audio_feats, Tensor) else Tensor(audio_feats)
    v = video_feats if isinstance(video_feats, Tensor) else Tensor(video_feats)
    if a.rows < 1 or a.cols < 1 or v.rows < 1 or v.cols < 1:
        raise ShapeError("feature matrices must be non-empty")
    dtype = a.dtype
    return HeteroGraph(
        audio_feats=a,
        video_feats=v,
        adj_aa=normalize_adjacency(temporal_edges(a.rows, rules.audio), dtype=dtype),
        adj_vv=normalize_adjacency(temporal_edges(v.rows, rules.video), dtype=dtype),
        adj_va=cross_modal_edges(a.rows, v.rows, rules.cross),
    )
