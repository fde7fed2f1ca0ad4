"""Model layers: per-modality GCNs, video-to-audio attention fusion, pooling.

The stacked layer updates audio nodes from two flows (audio GCN plus a
fused video message) and video nodes from one (video GCN); video never
reads from audio. Graph-level readout pools each modality's final node
embeddings, by default with learnable per-position weights, and a sigmoid
head scores each class independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .graph import HeteroGraph
from .tensor import ComputeGraph, Rng, ShapeError, Tensor, xavier_init

FUSION_GAT = "gat"
FUSION_GCN = "gcn"
FUSION_NONE = "none"
FUSION_MODES = (FUSION_GAT, FUSION_GCN, FUSION_NONE)

MODALITY_BOTH = "both"
MODALITY_AUDIO = "audio_only"
MODALITY_VIDEO = "video_only"
MODALITIES = (MODALITY_BOTH, MODALITY_AUDIO, MODALITY_VIDEO)

POOLING_MODES = ("learned", "mean", "max", "sum")

GAT_LEAKY_SLOPE = 0.2


@dataclass
class ModelConfig:
    """Shape and architecture knobs for HgnnModel."""

    d_audio: int
    d_video: int
    n_audio: int
    n_video: int
    num_classes: int
    hidden: int = 512
    num_layers: int = 4
    fusion: str = FUSION_GAT
    pooling: str = "learned"
    modality: str = MODALITY_BOTH

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class GcnLayer:
    """One graph convolution: ReLU(A_norm @ H @ W)."""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng, dtype=np.float32, name="gcn"):
        self.weight = xavier_init(in_dim, out_dim, rng, dtype=dtype, name=f"{name}.weight")

    def forward(self, g: ComputeGraph, feats: Tensor, adj_norm: Tensor) -> Tensor:
        return g.relu(g.matmul(adj_norm, g.matmul(feats, self.weight)))

    def params(self):
        return [self.weight]


class GatFusionLayer:
    """Single-head attention carrying video node content to audio nodes.

    Messages are W-projected video features. Each audio node scores its
    masked video neighbours with LeakyReLU(att_a . h_audio + att_v . W h_video),
    softmax-normalizes the scores, and takes the weighted sum. Audio and
    video inputs may have different widths, so the audio endpoint enters
    the score through its own attention vector on the raw features.
    """

    def __init__(self, audio_dim: int, video_dim: int, out_dim: int, rng: Rng,
                 dtype=np.float32, name="fusion"):
        self.w_msg = xavier_init(video_dim, out_dim, rng, dtype=dtype, name=f"{name}.w_msg")
        self.att_audio = xavier_init(audio_dim, 1, rng, dtype=dtype, name=f"{name}.att_audio")
        self.att_video = xavier_init(out_dim, 1, rng, dtype=dtype, name=f"{name}.att_video")
        self.dtype = dtype

    def forward(self, g: ComputeGraph, video_feats: Tensor, mask_va: np.ndarray,
                audio_feats: Tensor):
        """Returns (message [n_audio x out_dim], attention [n_audio x n_video])."""
        n_audio, n_video = audio_feats.rows, video_feats.rows
        if mask_va.shape != (n_audio, n_video):
            raise ShapeError(
                f"cross-modal mask {mask_va.shape} does not match "
                f"({n_audio} audio, {n_video} video) nodes")
        wh_v = g.matmul(video_feats, self.w_msg)
        score_v = g.matmul(wh_v, self.att_video)        # n_video x 1
        score_a = g.matmul(audio_feats, self.att_audio)  # n_audio x 1
        ones_row = Tensor(np.ones((1, n_video), dtype=self.dtype))
        ones_col = Tensor(np.ones((n_audio, 1), dtype=self.dtype))
        scores = g.add(g.matmul(score_a, ones_row),
                       g.matmul(ones_col, g.transpose(score_v)))
        scores = g.leaky_relu(scores, GAT_LEAKY_SLOPE)
        alpha = g.row_softmax_masked(scores, mask_va > 0)
        return g.matmul(alpha, wh_v), alpha

    def params(self):
        return [self.w_msg, self.att_audio, self.att_video]


class GcnFusionLayer:
    """Attention-free fusion: mean over masked video neighbours, then ReLU(. W).

    Used by the ablation that keeps both modalities but drops attention.
    Audio nodes with no video neighbours receive a zero message.
    """

    def __init__(self, video_dim: int, out_dim: int, rng: Rng, dtype=np.float32,
                 name="fusion"):
        self.weight = xavier_init(video_dim, out_dim, rng, dtype=dtype, name=f"{name}.weight")
        self.dtype = dtype

    def forward(self, g: ComputeGraph, video_feats: Tensor, mask_va: np.ndarray,
                audio_feats: Tensor = None):
        deg = mask_va.sum(axis=1, keepdims=True)
        norm = np.divide(mask_va, deg, out=np.zeros_like(mask_va, dtype=np.float64),
                         where=deg > 0)
        agg = g.matmul(Tensor(norm.astype(self.dtype)), g.matmul(video_feats, self.weight))
        return g.relu(agg), None

    def params(self):
        return [self.weight]


class HeteroLayer:
    """One stacked update step over both modalities."""

    def __init__(self, audio_in: int, video_in: int, out_dim: int, rng: Rng,
                 fusion: str, modality: str, dtype=np.float32, name="layer"):
        self.audio_gcn = None
        self.video_gcn = None
        self.fusion = None
        if modality in (MODALITY_BOTH, MODALITY_AUDIO):
            self.audio_gcn = GcnLayer(audio_in, out_dim, rng, dtype, name=f"{name}.audio")
        if modality in (MODALITY_BOTH, MODALITY_VIDEO):
            self.video_gcn = GcnLayer(video_in, out_dim, rng, dtype, name=f"{name}.video")
        if modality == MODALITY_BOTH and fusion == FUSION_GAT:
            self.fusion = GatFusionLayer(audio_in, video_in, out_dim, rng, dtype,
                                         name=f"{name}.fusion")
        elif modality == MODALITY_BOTH and fusion == FUSION_GCN:
            self.fusion = GcnFusionLayer(video_in, out_dim, rng, dtype,
                                         name=f"{name}.fusion")

    def forward(self, g: ComputeGraph, graph: HeteroGraph, h_a, h_v):
        """Returns (h_audio', h_video', attention or None)."""
        alpha = None
        new_a, new_v = None, None
        if self.audio_gcn is not None:
            new_a = self.audio_gcn.forward(g, h_a, graph.adj_aa)
            if self.fusion is not None:
                fused, alpha = self.fusion.forward(g, h_v, graph.adj_va, h_a)
                new_a = g.add(new_a, fused)
        if self.video_gcn is not None:
            new_v = self.video_gcn.forward(g, h_v, graph.adj_vv)
        return new_a, new_v, alpha

    def params(self):
        out = []
        if self.audio_gcn is not None:
            out.extend(self.audio_gcn.params())
        if self.video_gcn is not None:
            out.extend(self.video_gcn.params())
        if self.fusion is not None:
            out.extend(self.fusion.params())
        return out


@dataclass
class ForwardResult:
    probs: Tensor
    logits: Tensor
    embedding: Tensor
    attention: list = field(default_factory=list)       # per-layer alpha, numpy copies
    audio_states: list = field(default_factory=list)    # per-layer numpy copies
    video_states: list = field(default_factory=list)


class HgnnModel:
    """The full classifier: stacked hetero layers, pooling, sigmoid head."""

    def __init__(self, config: ModelConfig, rng: Rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        cfg = config
        self.layers = []
        audio_in, video_in = cfg.d_audio, cfg.d_video
        for i in range(cfg.num_layers):
            self.layers.append(HeteroLayer(
                audio_in, video_in, cfg.hidden, rng,
                fusion=cfg.fusion, modality=cfg.modality, dtype=dtype,
                name=f"layer{i}"))
            audio_in = video_in = cfg.hidden

        self.pool_audio = None
        self.pool_video = None
        if cfg.pooling == "learned":
            # Uniform start: learned pooling begins exactly at mean pooling.
            if cfg.modality in (MODALITY_BOTH, MODALITY_AUDIO):
                self.pool_audio = Tensor(
                    np.full((cfg.n_audio, 1), 1.0 / cfg.n_audio, dtype=dtype),
                    requires_grad=True, name="pool.audio")
            if cfg.modality in (MODALITY_BOTH, MODALITY_VIDEO):
                self.pool_video = Tensor(
                    np.full((cfg.n_video, 1), 1.0 / cfg.n_video, dtype=dtype),
                    requires_grad=True, name="pool.video")

        head_in = cfg.hidden * (2 if cfg.modality == MODALITY_BOTH else 1)
        self.cls_weight = xavier_init(head_in, cfg.num_classes, rng, dtype=dtype,
                                      name="classifier.weight")
        self.cls_bias = Tensor(np.zeros((1, cfg.num_classes), dtype=dtype),
                               requires_grad=True, name="classifier.bias")

    # -- parameters -----------------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        """All learnables in a fixed declaration order (checkpoint layout)."""
        params = []
        for layer in self.layers:
            params.extend(layer.params())
        if self.pool_audio is not None:
            params.append(self.pool_audio)
        if self.pool_video is not None:
            params.append(self.pool_video)
        params.extend([self.cls_weight, self.cls_bias])
        return [(p.name, p) for p in params]

    def count_params(self) -> int:
        return sum(p.data.size for _, p in self.named_params())

    def zero_grad(self):
        for _, p in self.named_params():
            p.zero_grad()

    # -- forward --------------------------------------------------------------

    def _check_graph(self, graph: HeteroGraph):
        cfg = self.config
        if cfg.modality != MODALITY_VIDEO and graph.audio_feats.cols != cfg.d_audio:
            raise ShapeError(f"graph audio dim {graph.audio_feats.cols} != model {cfg.d_audio}")
        if cfg.modality != MODALITY_AUDIO and graph.video_feats.cols != cfg.d_video:
            raise ShapeError(f"graph video dim {graph.video_feats.cols} != model {cfg.d_video}")
        if cfg.pooling == "learned":
            if self.pool_audio is not None and graph.n_audio != cfg.n_audio:
                raise ShapeError(
                    f"learned pooling expects {cfg.n_audio} audio nodes, got {graph.n_audio}")
            if self.pool_video is not None and graph.n_video != cfg.n_video:
                raise ShapeError(
                    f"learned pooling expects {cfg.n_video} video nodes, got {graph.n_video}")

    def _pool(self, g: ComputeGraph, h: Tensor, weights) -> Tensor:
        mode = self.config.pooling
        if mode == "learned":
            return g.matmul(g.transpose(weights), h)
        if mode == "mean":
            return g.col_mean(h)
        if mode == "max":
            return g.col_max(h)
        return g.col_sum(h)

    def forward(self, g: ComputeGraph, graph: HeteroGraph) -> ForwardResult:
        self._check_graph(graph)
        cfg = self.config
        result = ForwardResult(probs=None, logits=None, embedding=None)

        h_a = graph.audio_feats if cfg.modality != MODALITY_VIDEO else None
        h_v = graph.video_feats if cfg.modality != MODALITY_AUDIO else None
        for layer in self.layers:
            h_a, h_v, alpha = layer.forward(g, graph, h_a, h_v)
            if alpha is not None:
                result.attention.append(alpha.data.copy())
            if h_a is not None:
                result.audio_states.append(h_a.data.copy())
            if h_v is not None:
                result.video_states.append(h_v.data.copy())

        if cfg.modality == MODALITY_BOTH:
            pooled = g.concat_cols(self._pool(g, h_a, self.pool_audio),
                                   self._pool(g, h_v, self.pool_video))
        elif cfg.modality == MODALITY_AUDIO:
            pooled = self._pool(g, h_a, self.pool_audio)
        else:
            pooled = self._pool(g, h_v, self.pool_video)

        result.embedding = pooled
        result.logits = g.add(g.matmul(pooled, self.cls_weight), self.cls_bias)
        result.probs = g.sigmoid(result.logits)
        return result
