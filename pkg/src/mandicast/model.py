"""CNN + GraphSAGE price model over the mandi graph.

Per node, each of the 4 hourly weather channels runs through its own
conv -> relu -> maxpool tower whose per-channel global averages are
concatenated with the 12 non-weather snippet features.  Two fully
connected layers squeeze that to a 5-wide embedding; two GraphSAGE mean
aggregation layers mix embeddings over the market graph, and a linear
head emits one normalized price per node.

Training is plain gradient descent, one update per full-graph time slice,
slices in chronological order, with the learning rate dropping once at a
fixed epoch.  The validation coefficient of variation is evaluated on a
fixed cadence and the best checkpoint across the run is returned.

The training step below fuses the layer math of :mod:`mandicast.nn`
(identical formulas, batched over nodes and towers) for speed; the parity
of the two paths is covered by tests.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path

import numpy as np

from .features import FEATURE_NAMES, NormStats, Snippet
from .geograph import MandiGraph
from .metrics import EvalPairs, cov
from .nn import Param, glorot_uniform, sgd_step

WEATHER_FEATURE_IDX = (2, 3, 4, 5)
NONWEATHER_IDX = tuple(i for i in range(len(FEATURE_NAMES)) if i not in WEATHER_FEATURE_IDX)
N_TOWERS = 4

CHECKPOINT_MAGIC = b"MCKP"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and schedule knobs; defaults follow the full protocol."""

    n: int
    conv_channels: int = 4
    kernel: int = 5
    pool_window: int = 4
    pool_stride: int = 4
    fc_hidden: int = 16
    embedding_dim: int = 5
    sage_hidden: int = 16
    sage_out: int = 8
    threshold_km: float = 200.0
    epochs: int = 4000
    lr: float = 0.1
    lr_after_drop: float = 0.01
    lr_drop_epoch: int = 3000
    val_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim != 5:
            raise ModelError(f"embedding width is fixed at 5, got {self.embedding_dim}")
        if self.epochs < 1 or self.lr_drop_epoch < 1 or self.epochs < self.lr_drop_epoch:
            raise ModelError(
                f"epochs ({self.epochs}) must cover the lr drop epoch ({self.lr_drop_epoch})"
            )
        if self.val_every < 1:
            raise ModelError("val_every must be >= 1")
        if self.pool_window != self.pool_stride:
            raise ModelError("tower pooling requires window == stride")
        if self.tower_conv_len % self.pool_window != 0:
            raise ModelError(
                f"conv output length {self.tower_conv_len} not divisible by pool window {self.pool_window}"
            )

    @property
    def tower_input_len(self) -> int:
        return 24 * self.n

    @property
    def tower_conv_len(self) -> int:
        return self.tower_input_len - self.kernel + 1

    @property
    def tower_pooled_len(self) -> int:
        return self.tower_conv_len // self.pool_window

    @property
    def concat_width(self) -> int:
        return N_TOWERS * self.conv_channels + len(NONWEATHER_IDX)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index."""
        return self.lr if epoch <= self.lr_drop_epoch else self.lr_after_drop


def init_params(config: ModelConfig, seed: int | None = None) -> dict[str, Param]:
    """Glorot-uniform weights, zero biases, fixed draw order."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    c, k = config.conv_channels, config.kernel
    p: dict[str, Param] = {}
    for t in range(N_TOWERS):
        p[f"tower{t}.conv_w"] = Param(glorot_uniform(rng, (c, 1, k), fan_in=k, fan_out=c * k))
        p[f"tower{t}.conv_b"] = Param(np.zeros(c))
    dims = [
        ("fc1", config.fc_hidden, config.concat_width),
        ("fc2", config.embedding_dim, config.fc_hidden),
        ("sage1", config.sage_hidden, 2 * config.embedding_dim),
        ("sage2", config.sage_out, 2 * config.sage_hidden),
        ("head", 1, config.sage_out),
    ]
    for name, d_out, d_in in dims:
        p[f"{name}.w"] = Param(glorot_uniform(rng, (d_out, d_in), fan_in=d_in, fan_out=d_out))
        p[f"{name}.b"] = Param(np.zeros(d_out))
    return p


# ---------------------------------------------------------------------------
# time slices

@dataclass
class TimeSlice:
    """One full-graph time step, preprocessed for the fused training step."""

    start_date: date
    windows: np.ndarray              # (4, K, V*L_out) im2col per tower
    nonweather: np.ndarray           # (V, 12)
    targets_norm: np.ndarray | None  # (V,)
    targets_raw: np.ndarray | None   # (V,) Rs, for validation/test metrics

    @property
    def node_count(self) -> int:
        return self.nonweather.shape[0]


def make_slice(snippets: list[Snippet], config: ModelConfig) -> TimeSlice:
    """Preprocess one snippet-per-node group (same start date) into a slice."""
    if not snippets:
        raise ModelError("empty snippet group")
    start = snippets[0].start_date
    for s in snippets:
        if s.start_date != start:
            raise ModelError(f"mixed start dates in one slice: {start} vs {s.start_date}")
        if s.n != config.n:
            raise ModelError(f"snippet length {s.n} != configured {config.n}")
    k = config.kernel
    wb = np.stack([s.weather_block for s in snippets])            # (V, 4, 24n)
    towers = []
    for t in range(N_TOWERS):
        sw = np.lib.stride_tricks.sliding_window_view(wb[:, t, :], k, axis=1)
        towers.append(np.ascontiguousarray(sw.transpose(2, 0, 1).reshape(k, -1)))
    nonweather = np.stack([s.features[list(NONWEATHER_IDX)] for s in snippets])
    has_targets = [s.target is not None for s in snippets]
    targets_norm = targets_raw = None
    if all(has_targets):
        targets_raw = np.array([s.target for s in snippets], dtype=np.float64)
        if all(s.norm_target is not None for s in snippets):
            targets_norm = np.array([s.norm_target for s in snippets], dtype=np.float64)
    elif any(has_targets):
        raise ModelError(f"slice at {start}: targets present for only some nodes")
    return TimeSlice(start, np.stack(towers), nonweather, targets_norm, targets_raw)


def _stack_params(params: dict[str, Param]):
    conv_w = np.stack([params[f"tower{t}.conv_w"].value[:, 0, :] for t in range(N_TOWERS)])
    conv_b = np.stack([params[f"tower{t}.conv_b"].value for t in range(N_TOWERS)])
    names = ("fc1", "fc2", "sage1", "sage2", "head")
    rest = {n: (params[f"{n}.w"].value, params[f"{n}.b"].value) for n in names}
    return conv_w, conv_b, rest


def _forward_slice(conv_w, conv_b, rest, ts: TimeSlice, a_mean: np.ndarray, config: ModelConfig):
    v = ts.node_count
    c, pw = config.conv_channels, config.pool_window
    lp = config.tower_pooled_len
    z = np.matmul(conv_w, ts.windows)                    # (4, C, V*L_out)
    z += conv_b[:, :, None]
    act = np.maximum(z, 0.0)
    at = act.reshape(-1, pw)                             # rows: (4, C, V, Lp)
    best = at[:, 0].copy()
    besti = np.zeros(best.shape, dtype=np.intp)
    for j in range(1, pw):
        upd = at[:, j] > best                            # strict: first max wins
        np.copyto(best, at[:, j], where=upd)
        besti[upd] = j
    pooled = best.reshape(N_TOWERS, c, v, lp)
    tout = pooled.mean(-1)                               # (4, C, V)
    h0 = np.concatenate([tout.transpose(2, 0, 1).reshape(v, N_TOWERS * c), ts.nonweather], axis=1)
    fc1_w, fc1_b = rest["fc1"]
    fc2_w, fc2_b = rest["fc2"]
    s1_w, s1_b = rest["sage1"]
    s2_w, s2_b = rest["sage2"]
    h_w, h_b = rest["head"]
    z1 = h0 @ fc1_w.T + fc1_b
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ fc2_w.T + fc2_b
    emb = np.maximum(z2, 0.0)
    cat1 = np.concatenate([emb, a_mean @ emb], axis=1)
    zs1 = cat1 @ s1_w.T + s1_b
    g1 = np.maximum(zs1, 0.0)
    cat2 = np.concatenate([g1, a_mean @ g1], axis=1)
    zs2 = cat2 @ s2_w.T + s2_b
    g2 = np.maximum(zs2, 0.0)
    pred = (g2 @ h_w.T + h_b)[:, 0]
    cache = (z, besti, h0, z1, a1, z2, emb, cat1, zs1, g1, cat2, zs2, g2)
    return pred, cache


def _backward_slice(params: dict[str, Param], rest, ts: TimeSlice, a_mean_t: np.ndarray,
                    config: ModelConfig, cache, dpred: np.ndarray) -> None:
    z, besti, h0, z1, a1, z2, emb, cat1, zs1, g1, cat2, zs2, g2 = cache
    v = ts.node_count
    c, pw = config.conv_channels, config.pool_window
    lp = config.tower_pooled_len
    emb_dim, hid = config.embedding_dim, config.sage_hidden
    s1_w = rest["sage1"][0]
    s2_w = rest["sage2"][0]
    h_w = rest["head"][0]
    fc1_w = rest["fc1"][0]
    fc2_w = rest["fc2"][0]

    params["head.w"].grad += dpred[None, :] @ g2
    params["head.b"].grad += dpred.sum(keepdims=True)
    g_g2 = dpred[:, None] @ h_w
    g_zs2 = g_g2 * (zs2 > 0)
    params["sage2.w"].grad += g_zs2.T @ cat2
    params["sage2.b"].grad += g_zs2.sum(axis=0)
    g_cat2 = g_zs2 @ s2_w
    g_g1 = g_cat2[:, :hid] + a_mean_t @ g_cat2[:, hid:]
    g_zs1 = g_g1 * (zs1 > 0)
    params["sage1.w"].grad += g_zs1.T @ cat1
    params["sage1.b"].grad += g_zs1.sum(axis=0)
    g_cat1 = g_zs1 @ s1_w
    g_emb = g_cat1[:, :emb_dim] + a_mean_t @ g_cat1[:, emb_dim:]
    g_z2 = g_emb * (z2 > 0)
    params["fc2.w"].grad += g_z2.T @ a1
    params["fc2.b"].grad += g_z2.sum(axis=0)
    g_a1 = g_z2 @ fc2_w
    g_z1 = g_a1 * (z1 > 0)
    params["fc1.w"].grad += g_z1.T @ h0
    params["fc1.b"].grad += g_z1.sum(axis=0)
    g_h0 = g_z1 @ fc1_w
    g_tout = g_h0[:, :N_TOWERS * c].reshape(v, N_TOWERS, c).transpose(1, 2, 0)  # (4, C, V)
    rows = N_TOWERS * c * v * lp
    g_pool_flat = np.zeros(rows * pw)
    g_pool_flat[np.arange(rows) * pw + besti] = np.broadcast_to(
        (g_tout / lp)[..., None], (N_TOWERS, c, v, lp)
    ).reshape(-1)
    g_z = g_pool_flat.reshape(N_TOWERS, c, -1)
    g_z *= z > 0
    g_cw = np.matmul(g_z, ts.windows.transpose(0, 2, 1))           # (4, C, K)
    g_cb = g_z.sum(axis=2)
    for t in range(N_TOWERS):
        params[f"tower{t}.conv_w"].grad[:, 0, :] += g_cw[t]
        params[f"tower{t}.conv_b"].grad += g_cb[t]


def forward_model(params: dict[str, Param], config: ModelConfig, snippets: list[Snippet],
                  graph: MandiGraph) -> np.ndarray:
    """Normalized price prediction, one per graph node.

    Expects exactly one snippet per node (node order), all sharing the
    same start date and length, already normalized.
    """
    if len(snippets) != graph.node_count:
        raise ModelError(f"{len(snippets)} snippets for {graph.node_count} graph nodes")
    ts = make_slice(snippets, config)
    conv_w, conv_b, rest = _stack_params(params)
    pred, _ = _forward_slice(conv_w, conv_b, rest, ts, graph.mean_aggregation_matrix(), config)
    return pred


def model_loss_and_grads(params: dict[str, Param], config: ModelConfig, ts: TimeSlice,
                         a_mean: np.ndarray, a_mean_t: np.ndarray) -> float:
    """One fused forward+backward; gradients accumulate into ``params``."""
    if ts.targets_norm is None:
        raise ModelError(f"slice at {ts.start_date} has no training targets")
    conv_w, conv_b, rest = _stack_params(params)
    pred, cache = _forward_slice(conv_w, conv_b, rest, ts, a_mean, config)
    diff = pred - ts.targets_norm
    loss = float(diff @ diff / diff.size)
    _backward_slice(params, rest, ts, a_mean_t, config, cache, 2.0 * diff / diff.size)
    return loss


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainLogRow:
    epoch: int
    lr: float
    train_loss: float
    val_cov: float | None


@dataclass
class Checkpoint:
    """Self-contained model state: config, weights, normalizer, provenance."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    stats: NormStats
    epoch: int
    val_cov: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[TrainLogRow]


def _validation_cov(params, config, slices, a_mean, stats) -> float:
    conv_w, conv_b, rest = _stack_params(params)
    preds, actuals = [], []
    for ts in slices:
        pred, _ = _forward_slice(conv_w, conv_b, rest, ts, a_mean, config)
        preds.append(stats.denormalize_price(pred))
        actuals.append(ts.targets_raw)
    return cov(EvalPairs(np.concatenate(preds), np.concatenate(actuals)))


def train_model(config: ModelConfig, train_slices: list[TimeSlice], val_slices: list[TimeSlice],
                graph: MandiGraph, stats: NormStats) -> TrainResult:
    """Full training run returning the best-validation checkpoint and log."""
    if not train_slices or not val_slices:
        raise ModelError("need nonempty train and validation slices")
    for ts in train_slices:
        if ts.targets_norm is None:
            raise ModelError(f"training slice at {ts.start_date} lacks targets")
    for ts in val_slices:
        if ts.targets_raw is None:
            raise ModelError(f"validation slice at {ts.start_date} lacks targets")
    params = init_params(config)
    a_mean = graph.mean_aggregation_matrix()
    a_mean_t = np.ascontiguousarray(a_mean.T)
    log: list[TrainLogRow] = []
    best: Checkpoint | None = None
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        total = 0.0
        for k, ts in enumerate(train_slices):
            loss = model_loss_and_grads(params, config, ts, a_mean, a_mean_t)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, slice {k} ({ts.start_date})"
                )
            sgd_step(params, lr)
            total += loss
        val_cov = None
        if epoch % config.val_every == 0 or epoch == config.epochs:
            val_cov = _validation_cov(params, config, val_slices, a_mean, stats)
            if best is None or val_cov < best.val_cov:
                best = Checkpoint(
                    config,
                    {name: p.value.copy() for name, p in params.items()},
                    stats,
                    epoch,
                    val_cov,
                )
        log.append(TrainLogRow(epoch, lr, total / len(train_slices), val_cov))
    assert best is not None  # final epoch always evaluates
    return TrainResult(best, log)


def predict_prices(checkpoint: Checkpoint, snippets: list[Snippet], graph: MandiGraph) -> np.ndarray:
    """Denormalized price predictions (Rs/quintal), one per node."""
    params = {name: Param(value) for name, value in checkpoint.params.items()}
    pred = forward_model(params, checkpoint.config, snippets, graph)
    return checkpoint.stats.denormalize_price(pred)


# ---------------------------------------------------------------------------
# checkpoint file format

def _config_to_text(checkpoint: Checkpoint) -> str:
    lines = [f"{f.name}={getattr(checkpoint.config, f.name)!r}" for f in fields(ModelConfig)]
    lines.append(f"epoch={checkpoint.epoch!r}")
    lines.append(f"val_cov={checkpoint.val_cov!r}")
    return "\n".join(lines) + "\n"


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Binary format: magic, version, config text, shape-tagged float64
    tensors (weights then normalizer stats), trailing SHA-256."""
    stats = checkpoint.stats
    tensors = dict(checkpoint.params)
    tensors["stats.feature_min"] = stats.feature_min
    tensors["stats.feature_scale"] = stats.feature_scale
    tensors["stats.weather_min"] = stats.weather_min
    tensors["stats.weather_scale"] = stats.weather_scale
    config_blob = _config_to_text(checkpoint).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(config_blob)) + config_blob
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        body += _pack_tensor(name, arr)
    body += hashlib.sha256(body).digest()
    Path(path).write_bytes(body)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupted or truncated)")
    try:
        version, config_len = struct.unpack_from("<II", payload, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        offset = 12
        config_text = payload[offset:offset + config_len].decode("utf-8")
        offset += config_len
        (count,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(payload, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
            offset += 8 * size
        if offset != len(payload):
            raise CheckpointError(f"{path}: trailing bytes after tensor payload")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None

    meta: dict[str, str] = {}
    for line in config_text.splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    kwargs = {}
    for f in fields(ModelConfig):
        text = meta[f.name]
        kwargs[f.name] = int(text) if f.type == "int" else float(text) if f.type == "float" else text
    config = ModelConfig(**kwargs)
    stats = NormStats(
        tensors.pop("stats.feature_min"),
        tensors.pop("stats.feature_scale"),
        tensors.pop("stats.weather_min"),
        tensors.pop("stats.weather_scale"),
    )
    return Checkpoint(config, tensors, stats, int(meta["epoch"]), float(meta["val_cov"]))


TRAIN_LOG_HEADER = ["epoch", "lr", "train_loss", "val_cov"]


def write_train_log(path: str | Path, log: list[TrainLogRow]) -> None:
    import csv

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_HEADER)
        for row in log:
            writer.writerow(
                [row.epoch, repr(row.lr), repr(row.train_loss),
                 "" if row.val_cov is None else repr(row.val_cov)]
            )


def read_train_log(path: str | Path) -> list[TrainLogRow]:
    import csv

    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != TRAIN_LOG_HEADER:
            raise ModelError(f"bad train log header in {path}")
        for epoch, lr, loss, val in reader:
            rows.append(TrainLogRow(int(epoch), float(lr), float(loss), None if val == "" else float(val)))
    return rows
