"""A small fully connected encoder with an analytic backward pass and Adam.

The trainable pipeline is input -> hidden ReLU stack -> linear feature
layer -> linear head over the rank vocabulary.  Training runs the
mini-batch loop: build neighbor distributions for the batch's features and
labels, reparameterize them through the class multipliers, and descend the
combined objective (base ordinal loss + weighted alignment + entropy) with
Adam.  Everything is deterministic given (seed, config, dataset).
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, dualcore, otd
from .datagen import Dataset
from .errors import ConfigError, DatasetIOError, DegenerateBatchError, InputError, NonFiniteLossError

__all__ = [
    "EncoderParams",
    "AdamState",
    "TrainConfig",
    "EpochStats",
    "TrainResult",
    "forward",
    "backward",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

SAMPLING_MODES = ("random", "stratified")
BASE_LOSSES = ("ce", "sord")
CHECKPOINT_FORMAT = "coreord-checkpoint"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Parameters and forward/backward
# ---------------------------------------------------------------------------


@dataclass
class EncoderParams:
    """Weights of the feature map (hidden ReLU stack + linear feature layer)
    and the linear head.  ``weights[i]``/``biases[i]`` feed layer i."""

    weights: list
    biases: list
    head_weight: np.ndarray
    head_bias: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden_sizes, feature_dim: int,
             n_classes: int) -> "EncoderParams":
        """Symmetric uniform fan-in initialization, U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
        sizes = [input_dim, *hidden_sizes, feature_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        bound = 1.0 / np.sqrt(feature_dim)
        head_w = rng.uniform(-bound, bound, size=(feature_dim, n_classes))
        head_b = rng.uniform(-bound, bound, size=n_classes)
        return cls(weights, biases, head_w, head_b)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.head_weight.shape[1])

    def arrays(self) -> list:
        """Flat parameter list in a stable order (optimizer slots line up)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        out.extend([self.head_weight, self.head_bias])
        return out

    def copy(self) -> "EncoderParams":
        return copy.deepcopy(self)


def _forward_cache(params: EncoderParams, x: np.ndarray):
    """Forward pass keeping post-activation values of every layer."""
    h = x
    hidden = [x]
    last = len(params.weights) - 1
    pre_acts = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ w + b
        pre_acts.append(pre)
        h = np.maximum(pre, 0.0) if i < last else pre  # feature layer stays linear
        hidden.append(h)
    logits = h @ params.head_weight + params.head_bias
    return hidden, pre_acts, h, logits


def forward(params: EncoderParams, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Map inputs to (features, logits); deterministic given params and inputs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise InputError(f"input dim {x.shape[1]} != encoder input dim {params.input_dim}")
    _, _, z, logits = _forward_cache(params, x)
    return z, logits


def backward(params: EncoderParams, inputs, grad_features, grad_logits) -> EncoderParams:
    """Analytic parameter gradients given upstream gradients on z and logits.

    Returns the gradients packed in an :class:`EncoderParams` of matching
    shapes.  Dead ReLU units (negative pre-activation) pass no gradient.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    gz = np.asarray(grad_features, dtype=np.float64)
    gl = np.asarray(grad_logits, dtype=np.float64)
    hidden, pre_acts, z, _ = _forward_cache(params, x)
    if gz.shape != z.shape or gl.shape != (x.shape[0], params.n_classes):
        raise InputError("upstream gradient shapes do not match the forward pass")

    g_head_w = z.T @ gl
    g_head_b = gl.sum(axis=0)
    g = gz + gl @ params.head_weight.T

    g_weights = [None] * len(params.weights)
    g_biases = [None] * len(params.biases)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i < last:
            g = g * (pre_acts[i] > 0.0)
        g_weights[i] = hidden[i].T @ g
        g_biases[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return EncoderParams(g_weights, g_biases, g_head_w, g_head_b)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators with bias correction and L2 decay."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])

    def update(self, arrays, grads, lrs, weight_decays) -> None:
        """In-place Adam step; ``lrs``/``weight_decays`` are per-array."""
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for a, g, m, v, lr, wd in zip(arrays, grads, self.m, self.v, lrs, weight_decays):
            if wd:
                g = g + wd * a
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Configuration, history, results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Everything the training loop needs besides the dataset itself."""

    alpha: float = 10.0
    beta: float = 1.0
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-4
    decay_factor: float = 0.1
    decay_period: int = 20
    weight_decay: float = 1e-4
    seed: int = 0
    sampling: str = "random"
    dual_enabled: bool = True
    entropy_enabled: bool = True
    lambda_lr_scale: float = 1.0
    base_loss: str = "sord"
    hidden_sizes: tuple = (64, 64)
    feature_dim: int = 16

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.decay_factor <= 0 or self.decay_period < 1:
            raise ConfigError("decay_factor must be > 0 and decay_period >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling must be one of {SAMPLING_MODES}")
        if self.base_loss not in BASE_LOSSES:
            raise ConfigError(f"base_loss must be one of {BASE_LOSSES}")
        if self.lambda_lr_scale < 0:
            raise ConfigError("lambda_lr_scale must be >= 0")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes) or self.feature_dim < 1:
            raise ConfigError("hidden_sizes and feature_dim must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EpochStats:
    """Per-epoch means of the loss terms plus multiplier snapshot."""

    epoch: int
    l_or: float
    l_dual: float
    l_ent: float
    raw_kl: float
    residual: float
    lambdas: tuple
    learning_rate: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d


@dataclass
class TrainResult:
    params: EncoderParams
    duals: dualcore.DualVariables
    history: list
    config: TrainConfig
    class_ranks: np.ndarray
    steps: int


# ---------------------------------------------------------------------------
# Batch samplers
# ---------------------------------------------------------------------------


def _random_batches(rng, n: int, batch_size: int):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        chunk = perm[start:start + batch_size]
        if chunk.size >= 2:
            yield chunk


class _StratifiedSampler:
    """One sample per class per batch, classes cycled deterministically."""

    def __init__(self, rng, class_indices, batch_classes: int):
        self.rng = rng
        self.class_indices = class_indices
        self.batch_classes = batch_classes
        self.queues = [np.empty(0, dtype=np.int64) for _ in class_indices]
        self.cursor = 0

    def _draw(self, class_id: int) -> int:
        if self.queues[class_id].size == 0:
            self.queues[class_id] = self.rng.permutation(self.class_indices[class_id])
        idx, self.queues[class_id] = self.queues[class_id][0], self.queues[class_id][1:]
        return int(idx)

    def batch(self) -> np.ndarray:
        n_classes = len(self.class_indices)
        picked = [(self.cursor + i) % n_classes for i in range(self.batch_classes)]
        self.cursor = (self.cursor + self.batch_classes) % n_classes
        return np.array([self._draw(c) for c in picked], dtype=np.int64)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train(config: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run the mini-batch training loop; fully deterministic per seed.

    Per step: forward the batch, compute the base ordinal loss on the
    logits, build the label/feature neighbor distributions, reparameterize
    through the class multipliers, and backpropagate the combined
    objective to the encoder, head and multipliers.  The per-epoch history
    records each loss term, the raw label/feature KL and the prototype
    constraint gap as diagnostics, and the multiplier values.

    With ``alpha == beta == 0`` the gradient path reduces to the base loss
    alone and the parameter trace is bit-identical to baseline training.
    """
    if dataset.size < 2:
        raise DegenerateBatchError("dataset must hold at least 2 samples")

    rng = np.random.default_rng(config.seed)
    ranks = dataset.class_ranks
    n_classes = ranks.size
    class_of = np.searchsorted(ranks, dataset.labels)

    params = EncoderParams.init(
        rng, dataset.input_dim, config.hidden_sizes, config.feature_dim, n_classes
    )
    duals = dualcore.DualVariables.initial(n_classes)

    sord_matrix = np.stack([baselines.sord_targets(y, ranks) for y in dataset.labels])

    aux_active = config.alpha > 0 or config.beta > 0
    param_arrays = params.arrays()
    adam = AdamState.like(param_arrays)
    adam_duals = AdamState.like([duals.raw])

    class_indices = [np.flatnonzero(class_of == c) for c in range(n_classes)]
    strat_batch = min(config.batch_size, n_classes)

    history: list[EpochStats] = []
    last_good = (params.copy(), copy.deepcopy(duals))
    steps_done = 0

    for epoch in range(config.epochs):
        lr = config.learning_rate * config.decay_factor ** (epoch // config.decay_period)

        if config.sampling == "stratified":
            sampler = _StratifiedSampler(rng, class_indices, strat_batch)
            n_steps = max(1, dataset.size // strat_batch)
            batches = (sampler.batch() for _ in range(n_steps))
        else:
            batches = _random_batches(rng, dataset.size, config.batch_size)

        sums = np.zeros(5)  # l_or, l_dual, l_ent, raw_kl, residual
        n_batches = 0

        for batch in batches:
            x = dataset.features[batch]
            y = dataset.labels[batch]
            hidden, pre_acts, z, logits = _forward_cache(params, x)

            if config.base_loss == "sord":
                targets = sord_matrix[batch]
                l_or = baselines.sord_loss(logits, targets)
                g_logits = baselines.sord_loss_grad(logits, targets)
            else:
                idx = class_of[batch]
                l_or = baselines.cross_entropy(logits, idx)
                g_logits = baselines.cross_entropy_grad(logits, idx)

            partition = dualcore.ClassPartition(class_of[batch])
            q = otd.feature_otd(z)
            p_rows = dualcore.prototype_matrix(partition, ranks, y)
            label_rows = otd.label_otd(y)
            raw_kl = dualcore.batch_kl(label_rows, q)

            grad_z = np.zeros_like(z)
            l_dual = 0.0
            l_ent = 0.0
            grad_raw = None
            if aux_active:
                if config.dual_enabled:
                    beta_eff = config.beta if config.entropy_enabled else 0.0
                    dg = dualcore.dual_backward(
                        p_rows, z, duals, partition, config.alpha, beta_eff
                    )
                    grad_z = dg.features
                    grad_raw = dg.raw
                    l_dual = dg.loss_dual
                    l_ent = dg.loss_entropy if config.entropy_enabled else 0.0
                else:
                    l_dual = raw_kl  # plain alignment: no reparameterization
                    if config.alpha > 0:
                        g_q = config.alpha * dualcore.batch_kl_grad_q(label_rows, q)
                        grad_z = otd.feature_otd_backward(z, g_q)
                    if config.entropy_enabled and config.beta > 0:
                        l_ent = dualcore.entropy_reg(duals, partition.class_ids)
                        lam = duals.values()
                        g_lam = np.zeros_like(lam)
                        g_lam[partition.class_ids] = -config.beta * (
                            np.log(lam[partition.class_ids]) + 1.0
                        )
                        grad_raw = g_lam * duals.values_grad_raw()

            beta_for_total = config.beta if config.entropy_enabled else 0.0
            try:
                dualcore.total_loss(l_or, l_dual, l_ent, config.alpha, beta_for_total)
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(
                    f"non-finite loss at step {steps_done}: {exc}",
                    checkpoint=last_good,
                    history=history,
                ) from exc

            p_t = dualcore.reparam_p(p_rows, duals, partition)
            q_t = dualcore.reparam_q(q, duals, partition)
            residual = dualcore.constraint_residual(p_t, q_t, partition)

            grads = backward(params, x, grad_z, g_logits)
            grad_arrays = grads.arrays()
            lrs = [lr] * len(param_arrays)
            wds = [config.weight_decay] * len(param_arrays)
            adam.update(param_arrays, grad_arrays, lrs, wds)
            if grad_raw is not None:
                adam_duals.update([duals.raw], [grad_raw], [lr * config.lambda_lr_scale], [0.0])

            sums += (l_or, l_dual, l_ent, raw_kl, residual)
            n_batches += 1
            steps_done += 1

        if n_batches == 0:
            raise DegenerateBatchError("no usable batches in an epoch")
        means = sums / n_batches
        if not np.all(np.isfinite(means)) or not all(
            np.all(np.isfinite(a)) for a in param_arrays
        ):
            raise NonFiniteLossError(
                f"non-finite loss or parameters at epoch {epoch}",
                checkpoint=last_good,
                history=history,
            )
        history.append(
            EpochStats(
                epoch=epoch,
                l_or=float(means[0]),
                l_dual=float(means[1]),
                l_ent=float(means[2]),
                raw_kl=float(means[3]),
                residual=float(means[4]),
                lambdas=tuple(float(v) for v in duals.values()),
                learning_rate=lr,
            )
        )
        last_good = (params.copy(), copy.deepcopy(duals))

    return TrainResult(params, duals, history, config, ranks, steps_done)


# ---------------------------------------------------------------------------
# Checkpoint document
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: EncoderParams, duals: dualcore.DualVariables,
                    config: TrainConfig, class_ranks, step: int) -> None:
    """Write a self-describing JSON checkpoint (layout stable across versions)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "class_ranks": [float(r) for r in np.asarray(class_ranks).reshape(-1)],
        "step": int(step),
        "params": {
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()}
                for w, b in zip(params.weights, params.biases)
            ],
            "head": {
                "weight": params.head_weight.tolist(),
                "bias": params.head_bias.tolist(),
            },
        },
        "duals_raw": duals.raw.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (params, duals, config, class_ranks, step)."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DatasetIOError(f"{path} is not a coreord checkpoint")
    config = TrainConfig.from_dict(doc["config"])
    layers = doc["params"]["layers"]
    params = EncoderParams(
        [np.asarray(l["weight"], dtype=np.float64) for l in layers],
        [np.asarray(l["bias"], dtype=np.float64) for l in layers],
        np.asarray(doc["params"]["head"]["weight"], dtype=np.float64),
        np.asarray(doc["params"]["head"]["bias"], dtype=np.float64),
    )
    duals = dualcore.DualVariables(np.asarray(doc["duals_raw"], dtype=np.float64))
    ranks = np.asarray(doc["class_ranks"], dtype=np.float64)
    return params, duals, config, ranks, int(doc["step"])
