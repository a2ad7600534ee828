"""Seeded toy training run comparing attention variants.

Task: each sequence hides one complete *pair* of signal tokens (a_c, b_c)
whose class c is the label. Distractor classes appear as a doubled half
pair (a_j, a_j) or (b_j, b_j), so per-token counts tie and the model has to
relate tokens to each other to find the complete pair. A small symmetric
label noise keeps the achievable loss away from zero so variants can be
compared on loss as well as accuracy.

Model: token embedding -> 2 x [x + attn(x); x + mlp(x)] -> mean pool ->
linear head, trained with plain minibatch SGD at a fixed learning rate.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import armw
from .analysis import RedundancyReport, redundancy
from .attention import (
    AttentionConfig,
    AttentionVariant,
    AttentionWeights,
    attention,
    init_weights,
    required_names,
)
from .tensor_core import (
    GradTape,
    InvalidMaskError,
    Tensor,
    add,
    backward,
    cross_entropy,
    embedding,
    gelu,
    matmul,
    mean_axis,
)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToyTask:
    seed: int = 0
    seq_len: int = 8
    classes: int = 4
    noise_tokens: int = 8
    distractors: int = 2
    train_size: int = 2000
    eval_size: int = 1000
    label_noise: float = 0.02

    @property
    def vocab(self) -> int:
        return 2 * self.classes + self.noise_tokens

    def __post_init__(self):
        if self.distractors > self.classes - 1:
            raise ValueError("more distractor classes than available")
        if 2 + 2 * self.distractors > self.seq_len:
            raise ValueError("sequence too short for the pair plus distractors")
        if not 0 <= self.label_noise < 1:
            raise ValueError("label_noise must lie in [0, 1)")


def make_dataset(task: ToyTask) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(train_x, train_y, eval_x, eval_y).

    Labels cycle before shuffling so both splits start balanced; a
    ``label_noise`` fraction is then reassigned to a different class, which
    caps attainable accuracy near ``1 - label_noise``.
    """
    rng = np.random.default_rng(task.seed)

    def sample(n: int) -> tuple[np.ndarray, np.ndarray]:
        xs = np.empty((n, task.seq_len), dtype=np.int64)
        ys = np.arange(n, dtype=np.int64) % task.classes
        rng.shuffle(ys)
        for i, c in enumerate(ys):
            others = rng.choice([j for j in range(task.classes) if j != c],
                                size=task.distractors, replace=False)
            toks = [2 * c, 2 * c + 1]
            for j in others:
                half = 2 * j + int(rng.integers(2))
                toks += [half, half]
            fill = task.seq_len - len(toks)
            toks += list(2 * task.classes + rng.integers(task.noise_tokens, size=fill))
            xs[i] = rng.permutation(toks)
        flip = rng.random(n) < task.label_noise
        ys[flip] = (ys[flip] + rng.integers(1, task.classes, size=int(flip.sum()))) % task.classes
        return xs, ys

    tx, ty = sample(task.train_size)
    ex, ey = sample(task.eval_size)
    return tx, ty, ex, ey


@dataclass(frozen=True)
class ModelConfig:
    variant: AttentionVariant = AttentionVariant.REGULAR
    dim: int = 32
    heads: int = 2
    layers: int = 2
    mlp_hidden: int = 64


class ToyModel:
    def __init__(self, mcfg: ModelConfig, task: ToyTask, rng: np.random.Generator):
        self.mcfg = mcfg
        self.task = task
        d = mcfg.dim
        self.attn_cfg = AttentionConfig(mcfg.variant, task.seq_len, d, mcfg.heads)
        self.params: dict[str, Tensor] = {"embed.tokens": Tensor(rng.standard_normal((task.vocab, d)))}
        for i in range(mcfg.layers):
            for name, t in init_weights(self.attn_cfg, rng).tensors().items():
                self.params[f"layer{i}.{name}"] = t
            self.params[f"layer{i}.w_1"] = _uniform(rng, (d, mcfg.mlp_hidden), d)
            self.params[f"layer{i}.b_1"] = Tensor(np.zeros(mcfg.mlp_hidden))
            self.params[f"layer{i}.w_2"] = _uniform(rng, (mcfg.mlp_hidden, d), mcfg.mlp_hidden)
            self.params[f"layer{i}.b_2"] = Tensor(np.zeros(d))
        # zero head: untrained logits tie, so accuracy starts at chance
        self.params["head.w"] = Tensor(np.zeros((d, task.classes)))
        self.params["head.b"] = Tensor(np.zeros(task.classes))

    def attention_weights(self, layer: int) -> AttentionWeights:
        return AttentionWeights(**{n: self.params[f"layer{layer}.{n}"]
                                   for n in required_names(self.attn_cfg)})

    def logits(self, ids: np.ndarray) -> Tensor:
        p = self.params
        h = embedding(p["embed.tokens"], ids)
        for i in range(self.mcfg.layers):
            h = add(h, attention(h, self.attention_weights(i), self.attn_cfg))
            z = gelu(add(matmul(h, p[f"layer{i}.w_1"]), p[f"layer{i}.b_1"]))
            h = add(h, add(matmul(z, p[f"layer{i}.w_2"]), p[f"layer{i}.b_2"]))
        return add(matmul(mean_axis(h, 1), p["head.w"]), p["head.b"])

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    b = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-b, b, size=shape))


def evaluate(model: ToyModel, xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """(mean loss, accuracy) on a labelled set."""
    logits = model.logits(xs)
    loss = cross_entropy(logits, ys).item()
    acc = float((logits.data.argmax(axis=1) == ys).mean())
    return loss, acc


@dataclass
class EpochStats:
    epoch: int
    train_loss: float | None
    eval_loss: float
    eval_accuracy: float
    wall_seconds: float


@dataclass
class TrainRecord:
    variant: str
    seed: int
    lr: float
    epochs: int
    batch_size: int
    task: dict
    model: dict
    param_count: int
    history: list[EpochStats] = field(default_factory=list)
    weights: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    kind: str = "train"

    @property
    def initial_loss(self) -> float:
        return self.history[0].eval_loss

    @property
    def final_loss(self) -> float:
        return self.history[-1].eval_loss

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].eval_accuracy

    def to_dict(self, include_wall: bool = True) -> dict:
        hist = [asdict(h) for h in self.history]
        if not include_wall:
            for h in hist:
                h.pop("wall_seconds")
        return {"kind": self.kind, "variant": self.variant, "seed": self.seed, "lr": self.lr,
                "epochs": self.epochs, "batch_size": self.batch_size, "task": self.task,
                "model": self.model, "param_count": self.param_count,
                "final_eval_loss": self.final_loss, "final_eval_accuracy": self.final_accuracy,
                "history": hist}

    def save(self, path: str | os.PathLike) -> str:
        """Write the record as JSON at ``path`` and weights beside it as ``.armw``."""
        path = os.fspath(path)
        weights_path = os.path.splitext(path)[0] + ".armw"
        with open(path, "w") as fh:
            json.dump({**self.to_dict(), "weights": os.path.basename(weights_path)}, fh, indent=2)
            fh.write("\n")
        armw.save(weights_path, self.weights)
        return weights_path


DEFAULT_EPOCHS = 14
DEFAULT_LR = 0.05
DEFAULT_BATCH = 32
DEFAULT_SEED = 0


def train(
    variant=AttentionVariant.REGULAR,
    task: ToyTask | None = None,
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    seed: int = DEFAULT_SEED,
    batch_size: int = DEFAULT_BATCH,
    model_cfg: ModelConfig | None = None,
    log=None,
) -> TrainRecord:
    """Train the toy classifier; ``seed`` drives init and batch order, ``task.seed`` the data."""
    variant = AttentionVariant.parse(variant)
    task = task or ToyTask()
    mcfg = model_cfg or ModelConfig()
    mcfg = ModelConfig(variant, mcfg.dim, mcfg.heads, mcfg.layers, mcfg.mlp_hidden)
    tx, ty, ex, ey = make_dataset(task)
    rng = np.random.default_rng(seed)
    model = ToyModel(mcfg, task, rng)
    record = TrainRecord(variant.value, seed, lr, epochs, batch_size, asdict(task),
                         {**asdict(mcfg), "variant": variant.value}, model.param_count())

    loss0, acc0 = evaluate(model, ex, ey)
    record.history.append(EpochStats(0, None, loss0, acc0, 0.0))
    leaves = list(model.params.values())
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(tx))
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"), GradTape() as tape:
                    loss = cross_entropy(model.logits(tx[idx]), ty[idx])
            except (FloatingPointError, InvalidMaskError) as exc:
                raise TrainingError(f"training diverged in epoch {epoch}") from exc
            value = loss.item()
            grads = backward(loss, tape, wrt=leaves)
            for t in leaves:
                t.data -= lr * grads[t].data
            losses.append(value)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                eval_loss, acc = evaluate(model, ex, ey)
        except (FloatingPointError, InvalidMaskError) as exc:
            raise TrainingError(f"training diverged in epoch {epoch}") from exc
        stats = EpochStats(epoch, float(np.mean(losses)), eval_loss, acc, time.perf_counter() - t0)
        record.history.append(stats)
        if log is not None:
            log(stats)
    record.weights = {k: v.copy() for k, v in model.named_arrays().items()}
    return record


@dataclass
class EntanglementReport:
    rows: list[RedundancyReport]
    kind: str = "entanglement"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": [r.to_dict() for r in self.rows]}


def entanglement_probe(record_regular: TrainRecord, record_armour: TrainRecord,
                       epsilon: float = 1e-2, layer: int = 0) -> EntanglementReport:
    """Redundancy of (W_Q, W_K) and (W_Q, W_V) for Regular and (W_Q, W_K) for Armour.

    The direction of the comparison is reported only; it is not asserted.
    """
    wr, wa = record_regular.weights, record_armour.weights
    p = f"layer{layer}."
    rows = [
        redundancy(wr[p + "w_q"], wr[p + "w_k"], epsilon, pair="regular:wq_wk"),
        redundancy(wr[p + "w_q"], wr[p + "w_v"], epsilon, pair="regular:wq_wv"),
        redundancy(wa[p + "w_q"], wa[p + "w_k"], epsilon, pair="armour:wq_wk"),
    ]
    return EntanglementReport(rows)
