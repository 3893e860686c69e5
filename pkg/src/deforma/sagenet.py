"""Graph network surrogate for the FE deformation solver.

Architecture: a linear projection lifts the 3-component surface-load
displacement feature to the hidden width, a stack of message-passing
layers propagates it along the graph, and a 2-layer MLP head reads out
the predicted per-node displacement. Every layer is followed by ReLU;
the head output is linear. Gradients are hand-written reverse mode and
exact for the fixed architecture, training uses AdamW with decoupled
weight decay and mean-squared-error loss.
"""
from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._segops import scatter_rows_add, seg_max_argmax, seg_sum
from .loadcase import SPLIT_TRAIN, SPLIT_VAL, Dataset
from .meshgraph import DeformationGraph, with_features

LAYER_SAGE_MAX = "sage-max"
LAYER_GCN_MEAN = "gcn-mean"
LAYER_GRAPH_CONV = "graphconv"
_LAYER_KINDS = (LAYER_SAGE_MAX, LAYER_GCN_MEAN, LAYER_GRAPH_CONV)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"DCK2"


class NonFiniteActivationError(RuntimeError):
    """Raised when a forward stage produces NaN or infinity."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file fails validation."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Parameters
    ----------
    hidden_dim : int
        Channel width of every message-passing layer; at least 4 and
        even so the head can halve it.
    n_layers : int
        Message-passing depth.
    use_jumping_knowledge : bool
        When on, the head reads the elementwise max over all layer
        outputs instead of the last one.
    layer_kind : str
        Aggregation variant: ``sage-max`` (default),
        ``gcn-mean`` (mean over neighborhood plus self, single weight),
        or ``graphconv`` (self weight plus summed-neighbor weight).
    rng_seed : int
        Seed for weight initialization.
    """

    hidden_dim: int = 80
    n_layers: int = 8
    use_jumping_knowledge: bool = False
    layer_kind: str = LAYER_SAGE_MAX
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim < 4 or self.hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even and at least 4")
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")
        if self.layer_kind not in _LAYER_KINDS:
            raise ValueError(f"unknown layer_kind {self.layer_kind!r}")

    @property
    def head_dims(self) -> tuple[int, int, int]:
        return (self.hidden_dim, self.hidden_dim // 2, 3)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; one graph sample per step.

    With ``standardize`` on, training rescales features and targets by
    scalar statistics of the train split (stored in the checkpoint, so
    inference is unaffected by the switch). Zero feature entries stay
    zero either way, which keeps the sparse surface-load encoding
    intact.
    """

    epochs: int = 500
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    standardize: bool = False
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class Checkpoint:
    """Model parameters plus optimizer state.

    ``params`` maps tensor names to float64 arrays in a fixed insertion
    order: projection, per-layer self/neighbor weights, then the head.
    ``opt_m``/``opt_v`` hold first and second AdamW moments under the
    same names; ``opt_step`` counts completed optimizer steps.
    ``feature_scale``/``target_scale`` divide the input features and
    multiply the raw network output; both are 1 unless the model was
    trained with standardization on.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    opt_step: int = 0
    feature_scale: float = 1.0
    target_scale: float = 1.0

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            opt_m={k: v.copy() for k, v in self.opt_m.items()},
            opt_v={k: v.copy() for k, v in self.opt_v.items()},
            opt_step=self.opt_step,
            feature_scale=self.feature_scale,
            target_scale=self.target_scale,
        )


def _param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, half, out = config.head_dims
    shapes: dict[str, tuple[int, ...]] = {
        "projection.weight": (d, 3),
        "projection.bias": (d,),
    }
    for i in range(config.n_layers):
        shapes[f"layer{i}.w_self"] = (d, d)
        shapes[f"layer{i}.w_neigh"] = (d, d)
    shapes["head1.weight"] = (half, d)
    shapes["head1.bias"] = (half,)
    shapes["head2.weight"] = (out, half)
    shapes["head2.bias"] = (out,)
    return shapes


def init_checkpoint(config: ModelConfig) -> Checkpoint:
    """Fresh checkpoint, weights uniform in ±1/sqrt(fan_in), zero moments."""
    rng = np.random.default_rng(config.rng_seed)
    params: dict[str, np.ndarray] = {}
    fan_in = 0
    for name, shape in _param_shapes(config).items():
        if name.endswith("weight") or name.endswith(("w_self", "w_neigh")):
            fan_in = shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return Checkpoint(
        config=config,
        params=params,
        opt_m={k: np.zeros_like(v) for k, v in params.items()},
        opt_v={k: np.zeros_like(v) for k, v in params.items()},
        opt_step=0,
    )


def _check_finite(stage: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteActivationError(
            f"non-finite activation in stage {stage!r}"
        )


def _aggregate(
    graph: DeformationGraph, h: np.ndarray, kind: str
) -> tuple[np.ndarray, np.ndarray | None]:
    """Neighborhood reduction; returns (aggregate, argmax-or-None)."""
    if kind == LAYER_SAGE_MAX:
        return seg_max_argmax(graph.indptr, graph.indices, h)
    if kind == LAYER_GCN_MEAN:
        deg = np.diff(graph.indptr).astype(h.dtype)
        mean = (h + seg_sum(graph.indptr, graph.indices, h)) / (
            deg[:, None] + 1.0
        )
        return mean, None
    return seg_sum(graph.indptr, graph.indices, h), None


def sage_layer(
    h: np.ndarray,
    graph: DeformationGraph,
    w_self: np.ndarray,
    w_neigh: np.ndarray,
    kind: str = LAYER_SAGE_MAX,
) -> np.ndarray:
    """One message-passing layer with trailing ReLU.

    For the default max aggregation each output component is
    ``relu(w_self @ h_v + w_neigh @ max_neighbors)`` where the max runs
    elementwise over neighbor vectors and an empty neighborhood
    contributes zeros. ``gcn-mean`` applies ``w_self`` to the mean over
    the neighborhood including the node itself (``w_neigh`` unused);
    ``graphconv`` replaces the max with a plain neighbor sum.
    """
    d = w_self.shape[1]
    if h.ndim != 2 or h.shape[1] != d:
        raise ValueError(f"h must have shape (n, {d}), got {h.shape}")
    agg, _ = _aggregate(graph, h, kind)
    if kind == LAYER_GCN_MEAN:
        z = agg @ w_self.T
    else:
        z = h @ w_self.T + agg @ w_neigh.T
    return np.maximum(z, 0.0)


def _forward_cached(graph: DeformationGraph, checkpoint: Checkpoint) -> dict:
    cfg = checkpoint.config
    p = checkpoint.params
    x = graph.node_features
    _check_finite("input", x)
    if checkpoint.feature_scale != 1.0:
        x = x / checkpoint.feature_scale

    h = np.maximum(x @ p["projection.weight"].T + p["projection.bias"], 0.0)
    _check_finite("projection", h)
    hs = [h]
    aggs: list[np.ndarray] = []
    args: list[np.ndarray | None] = []
    for i in range(cfg.n_layers):
        agg, arg = _aggregate(graph, h, cfg.layer_kind)
        if cfg.layer_kind == LAYER_GCN_MEAN:
            z = agg @ p[f"layer{i}.w_self"].T
        else:
            z = h @ p[f"layer{i}.w_self"].T + agg @ p[f"layer{i}.w_neigh"].T
        h = np.maximum(z, 0.0)
        _check_finite(f"layer{i}", h)
        hs.append(h)
        aggs.append(agg)
        args.append(arg)

    if cfg.use_jumping_knowledge:
        stack = np.stack(hs[1:], axis=0)
        jk_arg = np.argmax(stack, axis=0)
        head_in = np.take_along_axis(stack, jk_arg[None], axis=0)[0]
    else:
        jk_arg = None
        head_in = hs[-1]

    pre1 = head_in @ p["head1.weight"].T + p["head1.bias"]
    h1 = np.maximum(pre1, 0.0)
    _check_finite("head1", h1)
    y = h1 @ p["head2.weight"].T + p["head2.bias"]
    _check_finite("head2", y)
    if checkpoint.target_scale != 1.0:
        y = y * checkpoint.target_scale
    return {
        "x": x,
        "hs": hs,
        "aggs": aggs,
        "args": args,
        "jk_arg": jk_arg,
        "head_in": head_in,
        "h1": h1,
        "y": y,
    }


def forward(graph: DeformationGraph, checkpoint: Checkpoint) -> np.ndarray:
    """Predict per-node displacement, shape (n_nodes, 3), meters."""
    return _forward_cached(graph, checkpoint)["y"]


def loss_and_gradients(
    graph: DeformationGraph,
    checkpoint: Checkpoint,
    target: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """MSE loss and exact parameter gradients.

    Loss is the mean over all ``n x 3`` entries of the squared error.
    The max aggregation routes its subgradient to the argmax neighbor
    per component (ties to the lowest neighbor index); ReLU uses the
    zero subgradient at the kink.
    """
    cfg = checkpoint.config
    p = checkpoint.params
    target = np.asarray(target, dtype=np.float64)
    cache = _forward_cached(graph, checkpoint)
    y = cache["y"]
    if target.shape != y.shape:
        raise ValueError(f"target must have shape {y.shape}, got {target.shape}")

    diff = y - target
    # overflow to inf is the divergence signal callers test for
    with np.errstate(over="ignore"):
        loss = float(np.mean(diff * diff))
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    d_y = 2.0 * diff / diff.size
    if checkpoint.target_scale != 1.0:
        d_y = d_y * checkpoint.target_scale
    h1 = cache["h1"]
    head_in = cache["head_in"]
    grads["head2.weight"] += d_y.T @ h1
    grads["head2.bias"] += d_y.sum(axis=0)
    d_h1 = d_y @ p["head2.weight"]
    d_pre1 = d_h1 * (h1 > 0.0)
    grads["head1.weight"] += d_pre1.T @ head_in
    grads["head1.bias"] += d_pre1.sum(axis=0)
    d_head_in = d_pre1 @ p["head1.weight"]

    hs = cache["hs"]
    d_hs = [np.zeros_like(h) for h in hs]
    if cfg.use_jumping_knowledge:
        jk_arg = cache["jk_arg"]
        for i in range(cfg.n_layers):
            mask = jk_arg == i
            d_hs[i + 1] += np.where(mask, d_head_in, 0.0)
    else:
        d_hs[-1] += d_head_in

    for i in range(cfg.n_layers - 1, -1, -1):
        h_out = hs[i + 1]
        h_in = hs[i]
        d_z = d_hs[i + 1] * (h_out > 0.0)
        agg = cache["aggs"][i]
        if cfg.layer_kind == LAYER_SAGE_MAX:
            grads[f"layer{i}.w_self"] += d_z.T @ h_in
            grads[f"layer{i}.w_neigh"] += d_z.T @ agg
            d_hs[i] += d_z @ p[f"layer{i}.w_self"]
            d_agg = d_z @ p[f"layer{i}.w_neigh"]
            scatter_rows_add(cache["args"][i], d_agg, d_hs[i])
        elif cfg.layer_kind == LAYER_GCN_MEAN:
            grads[f"layer{i}.w_self"] += d_z.T @ agg
            deg = np.diff(graph.indptr).astype(np.float64)
            scaled = (d_z @ p[f"layer{i}.w_self"]) / (deg[:, None] + 1.0)
            d_hs[i] += scaled + seg_sum(graph.indptr, graph.indices, scaled)
        else:
            grads[f"layer{i}.w_self"] += d_z.T @ h_in
            grads[f"layer{i}.w_neigh"] += d_z.T @ agg
            d_hs[i] += d_z @ p[f"layer{i}.w_self"]
            d_hs[i] += seg_sum(
                graph.indptr, graph.indices, d_z @ p[f"layer{i}.w_neigh"]
            )

    d_pre0 = d_hs[0] * (hs[0] > 0.0)
    grads["projection.weight"] += d_pre0.T @ cache["x"]
    grads["projection.bias"] += d_pre0.sum(axis=0)
    return loss, grads


def adamw_step(
    checkpoint: Checkpoint,
    grads: dict[str, np.ndarray],
    train_config: TrainConfig,
) -> Checkpoint:
    """One AdamW update; returns a new checkpoint, inputs untouched.

    Decoupled weight decay shrinks every parameter by
    ``1 - lr * weight_decay`` before the bias-corrected moment update.
    """
    lr = train_config.learning_rate
    wd = train_config.weight_decay
    step = checkpoint.opt_step + 1
    c1 = 1.0 - ADAM_BETA1**step
    c2 = 1.0 - ADAM_BETA2**step
    params: dict[str, np.ndarray] = {}
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for name, value in checkpoint.params.items():
        g = grads[name]
        m = ADAM_BETA1 * checkpoint.opt_m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * checkpoint.opt_v[name] + (1.0 - ADAM_BETA2) * g * g
        new = value * (1.0 - lr * wd)
        new -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        params[name] = new
        opt_m[name] = m
        opt_v[name] = v
    return Checkpoint(
        config=checkpoint.config,
        params=params,
        opt_m=opt_m,
        opt_v=opt_v,
        opt_step=step,
        feature_scale=checkpoint.feature_scale,
        target_scale=checkpoint.target_scale,
    )


def _scale_statistics(dataset: Dataset, train_idx: np.ndarray) -> tuple[float, float]:
    """Scalar feature/target scales from the train split.

    The feature scale is the root mean square of the nonzero surface
    entries (zeros carry no signal and would dilute it); the target
    scale is the root mean square over every entry. Either falls back
    to 1 when its statistic is degenerate.
    """
    feat_sq = 0.0
    feat_n = 0
    targ_sq = 0.0
    targ_n = 0
    for si in train_idx:
        sample = dataset.samples[int(si)]
        nonzero = sample.u_s[np.any(sample.u_s != 0.0, axis=1)]
        feat_sq += float((nonzero**2).sum())
        feat_n += nonzero.size
        targ_sq += float((sample.u**2).sum())
        targ_n += sample.u.size
    feature_scale = np.sqrt(feat_sq / feat_n) if feat_n else 1.0
    target_scale = np.sqrt(targ_sq / targ_n) if targ_n else 1.0
    if feature_scale <= 0.0:
        feature_scale = 1.0
    if target_scale <= 0.0:
        target_scale = 1.0
    return float(feature_scale), float(target_scale)


def _cosine_lr(base: float, epoch: int, total: int) -> float:
    """Half-cosine decay from ``base`` toward zero across the epoch budget.

    The final epoch keeps a small positive rate rather than reaching
    zero exactly, so every optimizer step remains a real update.
    """
    if total <= 1:
        return base
    return base * 0.5 * (1.0 + np.cos(np.pi * epoch / total))


def _split_mse(
    graph: DeformationGraph,
    checkpoint: Checkpoint,
    dataset: Dataset,
    indices: np.ndarray,
) -> float:
    total = 0.0
    for si in indices:
        sample = dataset.samples[int(si)]
        y = forward(with_features(graph, sample.u_s), checkpoint)
        diff = y - sample.u
        total += float(np.mean(diff * diff))
    return total / len(indices)


def train(
    dataset: Dataset,
    graph: DeformationGraph,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[Checkpoint, dict[str, list[float]]]:
    """Fit the surrogate on the dataset's train split.

    Steps through the train samples in a reshuffled order each epoch,
    one sample per optimizer step, swapping each sample's surface-load
    feature into the shared graph topology. The configured learning
    rate is the peak of a half-cosine decay schedule over the epoch
    budget, which settles the stochastic per-sample updates onto a far
    lower loss floor than a constant rate. Records mean train loss and
    validation loss per epoch and returns the checkpoint with the best
    validation loss (ties to the earlier epoch). With an empty
    validation split, selection falls back to train loss. When the
    train config asks for standardization, feature and target scales
    are measured on the train split once and baked into the returned
    checkpoint.

    Raises
    ------
    TrainingDivergedError
        If a step produces a non-finite loss; the message names the
        epoch and sample.
    """
    train_idx = dataset.indices_of(SPLIT_TRAIN)
    val_idx = dataset.indices_of(SPLIT_VAL)
    if train_idx.size == 0:
        raise ValueError("dataset has no train split")

    checkpoint = init_checkpoint(model_config)
    if train_config.standardize:
        scales = _scale_statistics(dataset, train_idx)
        checkpoint.feature_scale, checkpoint.target_scale = scales
    rng = np.random.default_rng(train_config.rng_seed)
    history: dict[str, list[float]] = {"train_loss": [], "val_loss": []}
    best = checkpoint.copy()
    best_score = np.inf

    for epoch in range(train_config.epochs):
        lr = _cosine_lr(train_config.learning_rate, epoch, train_config.epochs)
        step_config = replace(train_config, learning_rate=lr)
        order = rng.permutation(train_idx)
        epoch_total = 0.0
        for si in order:
            sample = dataset.samples[int(si)]
            g = with_features(graph, sample.u_s)
            loss, grads = loss_and_gradients(g, checkpoint, sample.u)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, sample {si}"
                )
            epoch_total += loss
            checkpoint = adamw_step(checkpoint, grads, step_config)
        train_loss = epoch_total / order.size
        history["train_loss"].append(train_loss)
        if val_idx.size:
            val_loss = _split_mse(graph, checkpoint, dataset, val_idx)
            history["val_loss"].append(val_loss)
            score = val_loss
        else:
            score = train_loss
        if score < best_score:
            best_score = score
            best = checkpoint.copy()
    return best, history


def predict(
    graph: DeformationGraph,
    checkpoint: Checkpoint,
    single_precision: bool = False,
) -> tuple[np.ndarray, float]:
    """Forward pass plus wall-clock seconds of the pass alone.

    The optional single-precision path casts parameters and features to
    float32 for the benchmark; accuracy metrics always use the default
    double path.
    """
    if single_precision:
        ckpt = Checkpoint(
            config=checkpoint.config,
            params={
                k: v.astype(np.float32) for k, v in checkpoint.params.items()
            },
            opt_step=checkpoint.opt_step,
            feature_scale=checkpoint.feature_scale,
            target_scale=checkpoint.target_scale,
        )
        g = replace(
            graph, node_features=graph.node_features.astype(np.float32)
        )
        start = time.perf_counter()
        y = forward(g, ckpt)
        elapsed = time.perf_counter() - start
        return y.astype(np.float64), elapsed
    start = time.perf_counter()
    y = forward(graph, checkpoint)
    elapsed = time.perf_counter() - start
    return y, elapsed


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    encoded = name.encode()
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    """Write a checkpoint file.

    Layout: magic ``DCK2``, config block, feature/target scales, step
    count, named float64 tensors (parameters, then first and second
    moments), and a sha256 trailer over everything before it.
    """
    cfg = checkpoint.config
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack(
        "<IIBBq",
        cfg.hidden_dim,
        cfg.n_layers,
        int(cfg.use_jumping_knowledge),
        _LAYER_KINDS.index(cfg.layer_kind),
        cfg.rng_seed,
    )
    blob += struct.pack(
        "<dd", checkpoint.feature_scale, checkpoint.target_scale
    )
    blob += struct.pack("<Q", checkpoint.opt_step)
    names = list(checkpoint.params)
    blob += struct.pack("<I", len(names))
    for group in (checkpoint.params, checkpoint.opt_m, checkpoint.opt_v):
        for name in names:
            blob += _pack_tensor(name, group[name])
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path: str) -> Checkpoint:
    """Read and validate a checkpoint file written by `save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 82 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint file")
    digest = blob[-32:]
    if hashlib.sha256(blob[:-32]).digest() != digest:
        raise CheckpointFormatError("checkpoint integrity hash mismatch")
    view = memoryview(blob[:-32])
    off = 4
    hidden, layers, jk, kind_code, seed = struct.unpack_from("<IIBBq", view, off)
    off += struct.calcsize("<IIBBq")
    if kind_code >= len(_LAYER_KINDS):
        raise CheckpointFormatError(f"unknown layer kind code {kind_code}")
    config = ModelConfig(
        hidden_dim=hidden,
        n_layers=layers,
        use_jumping_knowledge=bool(jk),
        layer_kind=_LAYER_KINDS[kind_code],
        rng_seed=seed,
    )
    feature_scale, target_scale = struct.unpack_from("<dd", view, off)
    off += 16
    if not (
        np.isfinite(feature_scale)
        and np.isfinite(target_scale)
        and feature_scale > 0.0
        and target_scale > 0.0
    ):
        raise CheckpointFormatError("scale factors must be finite and positive")
    (opt_step,) = struct.unpack_from("<Q", view, off)
    off += 8
    (n_names,) = struct.unpack_from("<I", view, off)
    off += 4

    expected = _param_shapes(config)
    if n_names != len(expected):
        raise CheckpointFormatError(
            f"expected {len(expected)} tensors, file declares {n_names}"
        )

    def read_group() -> dict[str, np.ndarray]:
        nonlocal off
        group: dict[str, np.ndarray] = {}
        for _ in range(n_names):
            (name_len,) = struct.unpack_from("<H", view, off)
            off += 2
            name = bytes(view[off : off + name_len]).decode()
            off += name_len
            (ndim,) = struct.unpack_from("<B", view, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", view, off)
            off += 4 * ndim
            if name not in expected or tuple(shape) != expected[name]:
                raise CheckpointFormatError(
                    f"tensor {name!r} has shape {tuple(shape)}, "
                    f"expected {expected.get(name)}"
                )
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(view, dtype="<f8", count=count, offset=off)
            off += 8 * count
            group[name] = arr.reshape(shape).copy()
        if len(group) != n_names:
            raise CheckpointFormatError("duplicate tensor names in file")
        return group

    params = read_group()
    opt_m = read_group()
    opt_v = read_group()
    if off != len(view):
        raise CheckpointFormatError("trailing bytes after tensor payload")
    if any(not np.isfinite(v).all() for v in params.values()):
        raise CheckpointFormatError("checkpoint parameters are not finite")
    return Checkpoint(
        config=config,
        params=params,
        opt_m=opt_m,
        opt_v=opt_v,
        opt_step=opt_step,
        feature_scale=feature_scale,
        target_scale=target_scale,
    )
