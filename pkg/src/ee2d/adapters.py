"""Per-layer classification adapters: forward pass, losses, training.

Each adapter is Linear(D -> H) + ReLU + Linear(H -> C) + Softmax with
H = 256 by default. Two training objectives are supported over frozen
embedding grids:

* adapter_only - each layer's adapter minimizes cross-entropy on the mean
  of the sample's sentence embeddings at that layer, independently of the
  other layers.
* joint_ft_loss - all adapters minimize a weighted sum of per-layer
  cross-entropies where layer i's classifier input is the average of that
  layer's prefix embeddings (mean over the running prefixes of 1..m
  sentences), so partial inputs are penalized too.

Gradients are analytic (manual backprop) and verified against central
finite differences by grad_check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datamodel import EmbeddingGrid
from .errors import DimensionMismatch, InconsistentShape, NonFiniteLoss, SchemaError

MODE_ADAPTER_ONLY = "adapter_only"
MODE_JOINT = "joint_ft_loss"

DEFAULT_HIDDEN_DIM = 256
# Probability floor inside cross-entropy; keeps log() finite.
CE_PROB_FLOOR = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdapterParams:
    w1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, C)
    b2: np.ndarray  # (C,)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    layer_weights: np.ndarray | None = None  # default: 0.1 per layer, 0.8 at L-1


def default_layer_weights(num_layers: int) -> np.ndarray:
    lam = np.full(num_layers, 0.1)
    lam[num_layers - 1] = 0.8
    return lam


def init_adapter(input_dim: int, num_classes: int, rng: np.random.Generator,
                 hidden_dim: int = DEFAULT_HIDDEN_DIM) -> AdapterParams:
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization."""
    s1 = 1.0 / np.sqrt(input_dim)
    s2 = 1.0 / np.sqrt(hidden_dim)
    return AdapterParams(
        w1=rng.uniform(-s1, s1, size=(input_dim, hidden_dim)),
        b1=rng.uniform(-s1, s1, size=hidden_dim),
        w2=rng.uniform(-s2, s2, size=(hidden_dim, num_classes)),
        b2=rng.uniform(-s2, s2, size=num_classes),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def adapter_forward_batch(params: AdapterParams, x: np.ndarray) -> np.ndarray:
    """Forward a (N, D) batch to (N, C) class distributions."""
    if x.shape[-1] != params.input_dim:
        raise DimensionMismatch(
            f"adapter expects input_dim {params.input_dim}, got {x.shape[-1]}"
        )
    hidden = np.maximum(x @ params.w1 + params.b1, 0.0)
    return softmax(hidden @ params.w2 + params.b2)


def adapter_forward(params: AdapterParams, x: np.ndarray) -> np.ndarray:
    """Forward one embedding vector to a class distribution."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d embedding, got shape {x.shape}")
    return adapter_forward_batch(params, x[None, :])[0]


def cross_entropy(probs: np.ndarray, label: int) -> float:
    return float(-np.log(max(float(probs[label]), CE_PROB_FLOOR)))


def prefix_embeddings(emb: EmbeddingGrid, layer: int) -> np.ndarray:
    """All m running-prefix means of layer `layer`: row j = mean of sentences 0..j."""
    cells = emb.cells[layer]  # (m, D)
    counts = np.arange(1, cells.shape[0] + 1, dtype=np.float64)[:, None]
    return np.cumsum(cells, axis=0) / counts


def mean_embedding(emb: EmbeddingGrid, layer: int) -> np.ndarray:
    return emb.cells[layer].mean(axis=0)


def adapter_loss(params: AdapterParams, emb: EmbeddingGrid, layer: int) -> float:
    """Cross-entropy of the adapter on the mean sentence embedding of one layer."""
    probs = adapter_forward(params, mean_embedding(emb, layer))
    return cross_entropy(probs, emb.label)


def aggregate_ft_loss(adapters, emb: EmbeddingGrid, lam) -> float:
    """Weighted sum over layers of cross-entropy on the mean of prefix embeddings."""
    lam = np.asarray(lam, dtype=np.float64)
    if len(adapters) != lam.shape[0]:
        raise DimensionMismatch(f"{len(adapters)} adapters but {lam.shape[0]} layer weights")
    if len(adapters) != emb.num_layers:
        raise DimensionMismatch(f"{len(adapters)} adapters but grid has {emb.num_layers} layers")
    total = 0.0
    for i, params in enumerate(adapters):
        if lam[i] == 0.0:
            continue
        probs = adapter_forward(params, prefix_embeddings(emb, i).mean(axis=0))
        total += float(lam[i]) * cross_entropy(probs, emb.label)
    return total


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------

def _forward_backward(params: AdapterParams, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over a batch plus analytic parameter gradients."""
    n = x.shape[0]
    z1 = x @ params.w1 + params.b1
    hidden = np.maximum(z1, 0.0)
    probs = softmax(hidden @ params.w2 + params.b2)
    picked = probs[np.arange(n), y]
    loss = float(-np.log(np.maximum(picked, CE_PROB_FLOOR)).mean())

    g = probs.copy()
    g[np.arange(n), y] -= 1.0
    g /= n
    dw2 = hidden.T @ g
    db2 = g.sum(axis=0)
    dh = g @ params.w2.T
    dz1 = dh * (z1 > 0.0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


class _Adam:
    def __init__(self, params: AdapterParams, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def step(self, params: AdapterParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for key, arr in params.arrays().items():
            g = grads[key]
            self.m[key] = ADAM_BETA1 * self.m[key] + (1.0 - ADAM_BETA1) * g
            self.v[key] = ADAM_BETA2 * self.v[key] + (1.0 - ADAM_BETA2) * g * g
            arr -= self.lr * (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + ADAM_EPS)


def layer_training_inputs(dataset, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Classifier inputs per layer for a whole dataset.

    Returns (inputs, labels) with inputs of shape (L, N, D): the mean
    sentence embedding per layer in adapter_only mode, the mean of the
    prefix embeddings per layer in joint mode. Embeddings are frozen, so
    these are computed once up front.
    """
    if not dataset:
        raise InconsistentShape("empty training dataset")
    L = dataset[0].num_layers
    D = dataset[0].embed_dim
    for idx, emb in enumerate(dataset):
        if emb.num_layers != L or emb.embed_dim != D:
            raise InconsistentShape(
                f"sample {idx}: shape (L={emb.num_layers}, D={emb.embed_dim}) "
                f"varies from (L={L}, D={D})"
            )
    inputs = np.empty((L, len(dataset), D))
    for n, emb in enumerate(dataset):
        if mode == MODE_ADAPTER_ONLY:
            inputs[:, n, :] = emb.cells.mean(axis=1)
        else:
            for i in range(L):
                inputs[i, n, :] = prefix_embeddings(emb, i).mean(axis=0)
    labels = np.array([emb.label for emb in dataset], dtype=np.int64)
    return inputs, labels


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _train_one_layer(layer: int, inputs: np.ndarray, labels: np.ndarray,
                     cfg: TrainConfig, num_classes: int, hidden_dim: int):
    """Self-contained training of one layer's adapter; owns its RNG stream."""
    params = init_adapter(
        inputs.shape[1], num_classes,
        np.random.default_rng(np.random.SeedSequence([cfg.seed, layer])),
        hidden_dim=hidden_dim,
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, layer, 1]))
    optimizer = _Adam(params, cfg.learning_rate)
    n = inputs.shape[0]
    trace = np.zeros(cfg.epochs)
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for batch in _batches(n, cfg.batch_size, rng):
            loss, grads = _forward_backward(params, inputs[batch], labels[batch])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"layer {layer} epoch {epoch}: loss is {loss}")
            optimizer.step(params, grads)
            epoch_loss += loss * len(batch)
        trace[epoch] = epoch_loss / n
    return params, trace


def train_adapters(dataset, cfg: TrainConfig, mode: str,
                   num_classes: int | None = None,
                   hidden_dim: int = DEFAULT_HIDDEN_DIM,
                   threads: int | None = None):
    """Train one adapter per layer; returns (adapters, per-epoch loss trace).

    The trace has shape (epochs, L) in adapter_only mode (one column per
    independent layer) and (epochs,) in joint mode (the aggregate loss).
    Per-layer randomness is seeded from (cfg.seed, layer), so adapter_only
    layers are independent tasks: running them in a thread pool (threads >
    1) or one at a time gives bit-identical results.
    """
    if mode not in (MODE_ADAPTER_ONLY, MODE_JOINT):
        raise ValueError(f"unknown training mode {mode!r}")
    if cfg.learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    inputs, labels = layer_training_inputs(dataset, mode)
    L, n, _ = inputs.shape
    C = int(num_classes) if num_classes is not None else int(labels.max()) + 1

    if mode == MODE_ADAPTER_ONLY:
        if threads and threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(
                    lambda i: _train_one_layer(i, inputs[i], labels, cfg, C, hidden_dim),
                    range(L)))
        else:
            results = [_train_one_layer(i, inputs[i], labels, cfg, C, hidden_dim)
                       for i in range(L)]
        adapters = [params for params, _ in results]
        trace = np.stack([t for _, t in results], axis=1)
        return adapters, trace

    adapters = [
        init_adapter(inputs.shape[2], C, np.random.default_rng(np.random.SeedSequence([cfg.seed, i])),
                     hidden_dim=hidden_dim)
        for i in range(L)
    ]

    lam = np.asarray(cfg.layer_weights if cfg.layer_weights is not None
                     else default_layer_weights(L), dtype=np.float64)
    if lam.shape[0] != L:
        raise DimensionMismatch(f"{lam.shape[0]} layer weights for {L} layers")
    if np.any(lam < 0):
        raise ValueError("layer weights must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, L, 1]))
    optimizers = [_Adam(adapters[i], cfg.learning_rate) for i in range(L)]
    trace = np.zeros(cfg.epochs)
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for batch in _batches(n, cfg.batch_size, rng):
            batch_loss = 0.0
            for i in range(L):
                if lam[i] == 0.0:
                    continue
                loss, grads = _forward_backward(adapters[i], inputs[i, batch], labels[batch])
                batch_loss += lam[i] * loss
                optimizers[i].step(adapters[i], {k: lam[i] * g for k, g in grads.items()})
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(f"epoch {epoch}: aggregate loss is {batch_loss}")
            epoch_loss += batch_loss * len(batch)
        trace[epoch] = epoch_loss / n
    return adapters, trace


def adapter_accuracy(params: AdapterParams, x: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax class matches the label."""
    preds = adapter_forward_batch(params, x).argmax(axis=1)
    return float((preds == labels).mean())


# ----------------------------------------------------------------------
# Gradient verification
# ----------------------------------------------------------------------

def _analytic_gradient_single(params: AdapterParams, x: np.ndarray, label: int):
    _, grads = _forward_backward(params, x[None, :], np.array([label]))
    return grads


def _max_relative_error(analytic: float, numeric: float) -> float:
    diff = abs(analytic - numeric)
    if diff < 1e-12:
        return 0.0
    return diff / max(abs(analytic), abs(numeric), 1e-10)


def grad_check(loss_kind: str, adapters, emb: EmbeddingGrid, eps: float = 1e-5,
               lam=None, layer: int = 0, num_coords: int = 60, seed: int = 0) -> float:
    """Compare analytic gradients to central finite differences.

    loss_kind "adapter_only" checks one layer's loss; "joint_ft_loss"
    checks the lambda-weighted aggregate across all adapters. Samples
    num_coords random parameter coordinates and returns the max relative
    error between (f(t+eps) - f(t-eps)) / 2 eps and the analytic value.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    rng = np.random.default_rng(seed)

    if loss_kind == MODE_ADAPTER_ONLY:
        params_list = [adapters[layer] if isinstance(adapters, (list, tuple)) else adapters]
        weights = [1.0]
        inputs = [mean_embedding(emb, layer)]

        def loss_of(plist):
            return adapter_loss(plist[0], emb, layer)
    elif loss_kind == MODE_JOINT:
        params_list = list(adapters)
        lam = np.asarray(lam if lam is not None else default_layer_weights(len(params_list)))
        weights = [float(w) for w in lam]
        inputs = [prefix_embeddings(emb, i).mean(axis=0) for i in range(len(params_list))]

        def loss_of(plist):
            return aggregate_ft_loss(plist, emb, lam)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")

    analytic = []
    for p, w, x in zip(params_list, weights, inputs):
        grads = _analytic_gradient_single(p, x, emb.label)
        analytic.append({k: w * g for k, g in grads.items()})

    # Flat list of (adapter index, array name, flat offset) coordinates.
    coords = []
    for ai, p in enumerate(params_list):
        for name, arr in p.arrays().items():
            coords.extend((ai, name, off) for off in range(arr.size))
    picked = rng.choice(len(coords), size=min(num_coords, len(coords)), replace=False)

    worst = 0.0
    for idx in picked:
        ai, name, off = coords[idx]
        arr = params_list[ai].arrays()[name]
        orig = arr.flat[off]
        arr.flat[off] = orig + eps
        f_plus = loss_of(params_list)
        arr.flat[off] = orig - eps
        f_minus = loss_of(params_list)
        arr.flat[off] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        worst = max(worst, _max_relative_error(float(analytic[ai][name].flat[off]), numeric))
    return worst


# ----------------------------------------------------------------------
# Adapter persistence
# ----------------------------------------------------------------------

def save_adapters(adapters, path) -> None:
    """Write adapters as JSONL, one {"layer":i,"w1":..,"b1":..,"w2":..,"b2":..} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(adapters):
            record = {
                "layer": i,
                "w1": p.w1.tolist(),
                "b1": p.b1.tolist(),
                "w2": p.w2.tolist(),
                "b2": p.b2.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def load_adapters(path) -> list[AdapterParams]:
    """Load a JSONL adapter file, ordered by layer index."""
    records = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path} line {line_no}: invalid JSON ({exc})") from None
            for key in ("layer", "w1", "b1", "w2", "b2"):
                if key not in obj:
                    raise SchemaError(f"{path} line {line_no}: adapter missing field {key!r}")
            try:
                params = AdapterParams(
                    w1=np.asarray(obj["w1"], dtype=np.float64),
                    b1=np.asarray(obj["b1"], dtype=np.float64),
                    w2=np.asarray(obj["w2"], dtype=np.float64),
                    b2=np.asarray(obj["b2"], dtype=np.float64),
                )
            except ValueError as exc:
                raise SchemaError(f"{path} line {line_no}: ragged adapter arrays ({exc})") from None
            if params.w1.ndim != 2 or params.w2.ndim != 2 or params.b1.ndim != 1 or params.b2.ndim != 1:
                raise SchemaError(f"{path} line {line_no}: bad adapter array ranks")
            if params.w1.shape[1] != params.b1.shape[0] or params.w2.shape[0] != params.w1.shape[1] \
                    or params.w2.shape[1] != params.b2.shape[0]:
                raise DimensionMismatch(f"{path} line {line_no}: adapter shapes do not line up")
            if not all(np.all(np.isfinite(a)) for a in params.arrays().values()):
                raise SchemaError(f"{path} line {line_no}: non-finite adapter weight")
            records[int(obj["layer"])] = params
    if not records:
        raise SchemaError(f"{path}: no adapters found")
    layers = sorted(records)
    if layers != list(range(len(layers))):
        raise SchemaError(f"{path}: layer indices {layers} are not contiguous from 0")
    return [records[i] for i in layers]
