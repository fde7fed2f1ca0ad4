"""Training: focal loss, Adam with warmup + one-step decay, checkpoints.

The loop processes graphs one at a time and averages gradients over each
minibatch. Batch composition at iteration t is a pure function of
(seed, t) - concatenated per-epoch permutations - so resuming from a
checkpoint replays the identical stream. Single-threaded on purpose:
same seed means bitwise-identical curves.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import EdgeRule, EdgeRules
from .layers import HgnnModel, ModelConfig
from .metrics import evaluate
from .tensor import ComputeGraph, NumericError, Rng, Tensor

CHECKPOINT_MAGIC = b"HGCK"
CHECKPOINT_VERSION = 1

PROB_CLAMP = 1e-7


class ConfigError(ValueError):
    """A config value is out of range or inconsistent with the dataset."""


@dataclass
class TrainConfig:
    """Hyperparameters for optimization, architecture, and graph building."""

    lr: float = 0.005
    decay_factor: float = 0.1
    decay_at_iter: int = 1500
    warmup_iters: int = 1000
    gamma: float = 2.0
    num_layers: int = 4
    hidden: int = 512
    rules: EdgeRules = field(default_factory=EdgeRules.default)
    seed: int = 0
    max_iters: int = 3000
    batch_size: int = 32
    pooling: str = "learned"
    fusion: str = "gat"
    modality: str = "both"
    eval_every: int = 100
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.lr <= 0 or self.decay_factor <= 0:
            raise ConfigError("lr and decay_factor must be positive")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.warmup_iters < 0 or self.decay_at_iter < 0:
            raise ConfigError("schedule iteration counts must be >= 0")
        if self.max_iters < 1 or self.batch_size < 1:
            raise ConfigError("max_iters and batch_size must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["rules"] = {
            "audio": {"span": self.rules.audio.span, "dilation": self.rules.audio.dilation},
            "video": {"span": self.rules.video.span, "dilation": self.rules.video.dilation},
            "cross": {"span": self.rules.cross.span, "dilation": self.rules.cross.dilation},
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "rules" in d and isinstance(d["rules"], dict):
            r = d["rules"]
            d["rules"] = EdgeRules(
                audio=EdgeRule(**r["audio"]),
                video=EdgeRule(**r["video"]),
                cross=EdgeRule(**r["cross"]),
            )
        return cls(**d)


def model_config_for(cfg: TrainConfig, d_audio: int, d_video: int,
                     n_audio: int, n_video: int, num_classes: int) -> ModelConfig:
    return ModelConfig(
        d_audio=d_audio, d_video=d_video, n_audio=n_audio, n_video=n_video,
        num_classes=num_classes, hidden=cfg.hidden, num_layers=cfg.num_layers,
        fusion=cfg.fusion, pooling=cfg.pooling, modality=cfg.modality)


# -- loss ----------------------------------------------------------------------


def focal_loss(g: ComputeGraph, probs: Tensor, targets: np.ndarray,
               gamma: float) -> Tensor:
    """Per-class binary focal loss, summed over classes.

    Positive classes contribute -(1-p)^gamma log p, negatives -p^gamma
    log(1-p); gamma = 0 reduces exactly to binary cross-entropy.
    Probabilities are clamped away from {0, 1} before the logs.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    y = np.asarray(targets, dtype=probs.dtype).reshape(1, -1)
    if y.shape != probs.shape:
        raise ValueError(f"targets shape {y.shape} != probs shape {probs.shape}")
    pos = Tensor(y)
    neg = Tensor(1.0 - y)
    p = g.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one_minus_p = g.scalar_add(g.scalar_mul(p, -1.0), 1.0)
    pos_term = g.mul(pos, g.mul(g.pow_scalar(one_minus_p, gamma), g.log(p)))
    neg_term = g.mul(neg, g.mul(g.pow_scalar(p, gamma), g.log(one_minus_p)))
    return g.scalar_mul(g.sum_all(g.add(pos_term, neg_term)), -1.0)


# -- schedule ------------------------------------------------------------------


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0, constant plateau, one-time decay step."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if cfg.warmup_iters > 0 and iteration < cfg.warmup_iters:
        return cfg.lr * iteration / cfg.warmup_iters
    if iteration >= cfg.decay_at_iter:
        return cfg.lr * cfg.decay_factor
    return cfg.lr


# -- optimizer -----------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction, one (m, v) pair per parameter."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._params = list(named_params)
        self.moments = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data))
            for name, p in self._params
        }

    def step(self, lr: float):
        self.step_count += 1
        t = self.step_count
        for name, p in self._params:
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            if not np.isfinite(grad).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m, v = self.moments[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


# -- dataset split ---------------------------------------------------------------


def split_dataset(items, fraction: float, seed: int):
    """Deterministic held-out split, stratified by label signature.

    Returns (train_items, val_items). Each distinct label combination is
    shuffled independently and contributes ~fraction of its items to the
    validation side, so small classes are not starved from either split.
    """
    if not items:
        raise ValueError("cannot split an empty dataset")
    groups: dict[tuple, list[int]] = {}
    for i, item in enumerate(items):
        key = tuple(np.flatnonzero(np.asarray(item.labels).ravel() > 0).tolist())
        groups.setdefault(key, []).append(i)
    rng = Rng(seed)
    val_idx = set()
    for key in sorted(groups):
        idx = groups[key]
        order = rng.permutation(len(idx))
        n_val = int(len(idx) * fraction)
        val_idx.update(idx[order[j]] for j in range(n_val))
    if not val_idx and len(items) > 1:
        val_idx.add(len(items) - 1)
    train_items = [it for i, it in enumerate(items) if i not in val_idx]
    val_items = [it for i, it in enumerate(items) if i in val_idx]
    return train_items, val_items


# -- batch stream ----------------------------------------------------------------


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    return gen.permutation(n)


class _BatchStream:
    """Batch b(t) for iteration t >= 1, independent of loop state.

    The stream is the concatenation of per-epoch permutations, each keyed
    by (seed, epoch); iteration t takes positions [(t-1)*B, t*B).
    """

    def __init__(self, seed: int, n_items: int, batch_size: int):
        self.seed, self.n, self.batch = seed, n_items, batch_size
        self._perms: dict[int, np.ndarray] = {}

    def indices(self, iteration: int) -> list[int]:
        start = (iteration - 1) * self.batch
        out = []
        for pos in range(start, start + self.batch):
            epoch, offset = divmod(pos, self.n)
            if epoch not in self._perms:
                self._perms.clear()  # only the current window is ever needed
                self._perms[epoch] = _epoch_permutation(self.seed, epoch, self.n)
            out.append(int(self._perms[epoch][offset]))
        return out


# -- checkpoint ------------------------------------------------------------------


@dataclass
class Checkpoint:
    train_config: TrainConfig
    model_config: ModelConfig
    iteration: int
    adam_step: int
    rng_state: dict
    params: dict          # name -> ndarray (f32)
    adam_m: dict
    adam_v: dict

    def build_model(self, dtype=np.float32) -> HgnnModel:
        model = HgnnModel(self.model_config, Rng(0), dtype=dtype)
        for name, p in model.named_params():
            if name not in self.params:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            if self.params[name].shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint parameter {name!r} has shape "
                    f"{self.params[name].shape}, model expects {p.data.shape}")
            p.data = self.params[name].astype(dtype, copy=True)
        return model

    def build_optimizer(self, model: HgnnModel) -> Adam:
        opt = Adam(model.named_params())
        opt.step_count = self.adam_step
        for name, _ in model.named_params():
            opt.moments[name] = (self.adam_m[name].copy(), self.adam_v[name].copy())
        return opt


def save_checkpoint(path, model: HgnnModel, optimizer: Adam, iteration: int,
                    rng: Rng, train_config: TrainConfig):
    """Single binary file: magic, version, JSON header, then f32 LE tensors.

    Tensor payload order is model parameters, then Adam first moments, then
    second moments, all in the model's declared parameter order.
    """
    named = model.named_params()
    header = {
        "train_config": train_config.to_dict(),
        "model_config": model.config.to_dict(),
        "iteration": int(iteration),
        "adam_step": int(optimizer.step_count),
        "rng_state": rng.get_state(),
        "params": [
            {"name": name, "rows": p.rows, "cols": p.cols} for name, p in named
        ],
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for _, p in named:
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        for which in (0, 1):
            for name, _ in named:
                f.write(np.ascontiguousarray(optimizer.moments[name][which],
                                             dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ConfigError(f"not a checkpoint file: bad magic {blob[:4]!r}")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    offset = 12 + header_len

    def take(rows, cols):
        nonlocal offset
        nbytes = rows * cols * 4
        if offset + nbytes > len(blob):
            raise ConfigError(
                f"checkpoint truncated: need {offset + nbytes} bytes, have {len(blob)}")
        arr = np.frombuffer(blob, dtype="<f4", count=rows * cols,
                            offset=offset).reshape(rows, cols).copy()
        offset += nbytes
        return arr

    specs = header["params"]
    params = {s["name"]: take(s["rows"], s["cols"]) for s in specs}
    adam_m = {s["name"]: take(s["rows"], s["cols"]) for s in specs}
    adam_v = {s["name"]: take(s["rows"], s["cols"]) for s in specs}
    return Checkpoint(
        train_config=TrainConfig.from_dict(header["train_config"]),
        model_config=ModelConfig.from_dict(header["model_config"]),
        iteration=header["iteration"],
        adam_step=header["adam_step"],
        rng_state=header["rng_state"],
        params=params, adam_m=adam_m, adam_v=adam_v)


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: HgnnModel
    optimizer: Adam
    rng: Rng
    config: TrainConfig
    history: list          # rows: {iteration, loss, lr, map, roc_auc}
    final_iteration: int

    def save(self, checkpoint_path):
        save_checkpoint(checkpoint_path, self.model, self.optimizer,
                        self.final_iteration, self.rng, self.config)


def _check_dataset(items, cfg: TrainConfig):
    if not items:
        raise ConfigError("empty dataset")
    first = items[0]
    d_a, d_v = first.graph.audio_feats.cols, first.graph.video_feats.cols
    n_a, n_v = first.graph.n_audio, first.graph.n_video
    n_classes = np.asarray(first.labels).size
    for item in items:
        g = item.graph
        if g.audio_feats.cols != d_a or g.video_feats.cols != d_v:
            raise ConfigError(
                f"item {item.item_id!r} feature dims ({g.audio_feats.cols}, "
                f"{g.video_feats.cols}) differ from first item ({d_a}, {d_v})")
        if np.asarray(item.labels).size != n_classes:
            raise ConfigError(f"item {item.item_id!r} has inconsistent label width")
        if cfg.pooling == "learned" and (g.n_audio != n_a or g.n_video != n_v):
            raise ConfigError(
                f"learned pooling needs uniform node counts; item {item.item_id!r} "
                f"has ({g.n_audio}, {g.n_video}), first item ({n_a}, {n_v})")
    return d_a, d_v, n_a, n_v, n_classes


def train(items, cfg: TrainConfig, val_items=None, resume: Checkpoint | None = None,
          progress=None) -> TrainResult:
    """Run the loop to cfg.max_iters; returns the trained model and history.

    `resume` continues a run bitwise-identically from its saved iteration.
    `progress(row)` is called once per iteration with the history row.
    """
    d_a, d_v, n_a, n_v, n_classes = _check_dataset(items, cfg)

    if resume is not None:
        model = resume.build_model()
        optimizer = resume.build_optimizer(model)
        rng = Rng(cfg.seed)
        rng.set_state(resume.rng_state)
        start = resume.iteration
    else:
        rng = Rng(cfg.seed)
        model = HgnnModel(model_config_for(cfg, d_a, d_v, n_a, n_v, n_classes), rng)
        optimizer = Adam(model.named_params())
        start = 0

    stream = _BatchStream(cfg.seed, len(items), cfg.batch_size)
    history = []
    last_map, last_auc = float("nan"), float("nan")
    for t in range(start + 1, cfg.max_iters + 1):
        lr = lr_at(t, cfg)
        model.zero_grad()
        batch = stream.indices(t)
        total = 0.0
        for idx in batch:
            g = ComputeGraph()
            result = model.forward(g, items[idx].graph)
            loss = focal_loss(g, result.probs, items[idx].labels, cfg.gamma)
            g.backward(loss)
            total += loss.item()
        inv_batch = np.float32(1.0 / len(batch))
        for _, p in model.named_params():
            if p.grad is not None:
                p.grad *= inv_batch
        optimizer.step(lr)

        if val_items and (t % cfg.eval_every == 0 or t == cfg.max_iters):
            ev = evaluate(model, val_items)
            last_map, last_auc = ev.map, ev.roc_auc
        row = {"iteration": t, "loss": total / len(batch), "lr": lr,
               "map": last_map, "roc_auc": last_auc}
        history.append(row)
        if progress is not None:
            progress(row)

    return TrainResult(model=model, optimizer=optimizer, rng=rng, config=cfg,
                       history=history, final_iteration=cfg.max_iters)


def write_history_csv(path, history):
    with open(path, "w") as f:
        f.write("iter,loss,lr,map,roc_auc\n")
        for row in history:
            f.write(f"{row['iteration']},{row['loss']:.8g},{row['lr']:.8g},"
                    f"{row['map']:.8g},{row['roc_auc']:.8g}\n")


# -- multi-seed protocol ------------------------------------------------------------


@dataclass
class SeedSummary:
    seeds: list
    per_seed_map: list
    per_seed_auc: list
    map_mean: float
    map_std: float
    auc_mean: float
    auc_std: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def run_seeds(items, cfg: TrainConfig, seeds, progress=None) -> SeedSummary:
    """Train once per seed on a shared split; report mean and sample std."""
    if not seeds:
        raise ConfigError("need at least one seed")
    train_items, val_items = split_dataset(items, cfg.val_fraction, cfg.seed)
    maps, aucs = [], []
    for s in seeds:
        result = train(train_items, replace(cfg, seed=int(s)), val_items=val_items,
                       progress=progress)
        ev = evaluate(result.model, val_items)
        maps.append(ev.map)
        aucs.append(ev.roc_auc)
    map_mean, map_std = _mean_std(maps)
    auc_mean, auc_std = _mean_std(aucs)
    return SeedSummary(seeds=list(seeds), per_seed_map=maps, per_seed_auc=aucs,
                       map_mean=map_mean, map_std=map_std,
                       auc_mean=auc_mean, auc_std=auc_std)
