"""Adam, the training loop, and the fine-tune / retrain workflows."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import Pair, Vocab, make_batches
from .init import InitScheme, init_bridge
from .model import ModelConfig, Seq2Seq

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str, step: int):
        super().__init__(f"non-finite gradient for {name!r} at step {step}")
        self.name, self.step = name, step


class TrainingHalted(RuntimeError):
    """Raised when a step produces a non-finite loss or gradient.

    ``checkpoint`` holds the parameters as they were when the run halted.
    """

    def __init__(self, message: str, step: int, checkpoint: Checkpoint, losses: list[float]):
        super().__init__(message)
        self.step, self.checkpoint, self.losses = step, checkpoint, losses


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, betas=(0.9, 0.98), eps: float = 1e-9) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name, state.step + 1)
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state for {name!r} has shape {m.shape}, param {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        c = max_norm / (total + 1e-6)
        for g in grads.values():
            g *= c
    return total


@dataclass
class TrainConfig:
    mode: str = "retrain"
    steps: int | None = 2000
    epochs: int | None = None
    batch_size: int = 16
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    clip_norm: float = 1.0
    seed: int = 0
    bridge_init: str | None = None
    body_init: str = "xavier"
    freeze_base: bool = False
    log_every: int = 1
    warmup_steps: int = 0

    def __post_init__(self):
        if self.mode not in ("finetune", "retrain"):
            raise ValueError(f"mode must be 'finetune' or 'retrain', got {self.mode!r}")
        if (self.steps is None) == (self.epochs is None):
            raise ValueError("set exactly one of steps / epochs")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.bridge_init is not None:
            InitScheme(self.bridge_init)
        self.betas = tuple(self.betas)

    def total_steps(self, n_pairs: int) -> int:
        if self.steps is not None:
            return self.steps
        return self.epochs * math.ceil(n_pairs / self.batch_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainResult:
    model: Seq2Seq
    checkpoint: Checkpoint
    losses: list[float]
    initial_bridge: list[np.ndarray] | None = None


def _epoch_seed(seed: int, epoch: int) -> int:
    return seed * 100_003 + epoch


def write_loss_csv(losses: Sequence[float], path, log_every: int = 1) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = ["step,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses) if i % log_every == 0]
    path.write_text("\n".join(rows) + "\n")
    return path


def build_model(cfg: TrainConfig, *, base: Checkpoint | None = None,
                model_config: ModelConfig | None = None) -> Seq2Seq:
    """Fresh model (retrain) or base checkpoint plus a newly attached bridge (finetune)."""
    if cfg.mode == "finetune":
        if base is None:
            raise ValueError("finetune mode needs a base checkpoint")
        model = base.to_model()
        model.detach_bridge()
        if cfg.bridge_init is not None:
            c = model.config
            model.attach_bridge(init_bridge(InitScheme(cfg.bridge_init, cfg.seed),
                                            c.n_enc_layers, c.n_dec_layers, c.d_model))
        return model
    if model_config is None:
        raise ValueError("retrain mode needs a model config")
    model = Seq2Seq.create(ModelConfig.from_dict(model_config.to_dict()), seed=cfg.seed,
                           body_init=cfg.body_init)
    if cfg.bridge_init is not None:
        c = model.config
        model.attach_bridge(init_bridge(InitScheme(cfg.bridge_init, cfg.seed),
                                        c.n_enc_layers, c.n_dec_layers, c.d_model))
    return model


def train_run(cfg: TrainConfig, pairs: Sequence[Pair], vocab: Vocab, *,
              base: Checkpoint | None = None, model_config: ModelConfig | None = None,
              on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train for ``cfg.total_steps`` updates; ``losses[i]`` is the loss before update ``i + 1``."""
    if not pairs:
        raise ValueError("no training pairs")
    if base is not None and base.vocab != vocab.tokens():
        raise ValueError("training vocabulary differs from the base checkpoint's")
    model = build_model(cfg, base=base, model_config=model_config)
    if model.config.vocab_size < len(vocab):
        raise ValueError(f"vocab of {len(vocab)} tokens exceeds model vocab_size "
                         f"{model.config.vocab_size}")
    named = model.parameters()
    trainable = named
    if cfg.freeze_base and model.bridge is not None:
        trainable = model.bridge.named()
    initial_bridge = None if model.bridge is None else [a.copy() for a in model.bridge.arrays()]

    state = AdamState()
    losses: list[float] = []
    total = cfg.total_steps(len(pairs))
    batches: list = []
    epoch = 0

    def halt(msg: str, step: int):
        ckpt = Checkpoint.from_model(model, vocab, step, losses, state,
                                     meta={"train_config": cfg.to_dict(), "halted": msg})
        raise TrainingHalted(msg, step, ckpt, losses)

    for step in range(total):
        if not batches:
            batches = make_batches(pairs, vocab, cfg.batch_size, _epoch_seed(cfg.seed, epoch))
            batches.reverse()
            epoch += 1
        b = batches.pop()
        model.zero_grad()
        loss = model.loss(b.src, b.tgt_in, b.tgt_out)
        value = float(loss.item())
        if not math.isfinite(value):
            halt(f"non-finite loss {value} at step {step}", step)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
        if cfg.log_every and step % max(cfg.log_every, 1) == 0:
            log.debug("step %d loss %.6f", step, value)
        loss.backward(trainable.values())
        grads = {k: p.grad for k, p in trainable.items()}
        clip_grad_norm(grads, cfg.clip_norm)
        lr = cfg.lr
        if cfg.warmup_steps:
            lr *= min(1.0, (step + 1) / cfg.warmup_steps)
        try:
            adam_step({k: p.data for k, p in trainable.items()}, grads, state, lr,
                      cfg.betas, cfg.eps)
        except NonFiniteGradient as exc:
            halt(str(exc), step)

    model.zero_grad()
    ckpt = Checkpoint.from_model(model, vocab, total, losses, state,
                                 meta={"train_config": cfg.to_dict()})
    return TrainResult(model, ckpt, losses, initial_bridge)
