"""Post-LN encoder-decoder transformer with an optional encoder-decoder bridge.

The encoder keeps every layer's output. Without a bridge each decoder layer
cross-attends over the last encoder layer (the stock architecture). With a
bridge, decoder layer ``i`` cross-attends over ``concat(layers) @ W_i`` where
``W_i`` is a bias-free ``(L_enc * d_model, d_model)`` matrix applied at every
source position.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .init import init_bridge, xavier_bound
from .tensor import Tensor

NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int = 60
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    n_enc_layers: int = 4
    n_dec_layers: int = 4
    max_seq_len: int = 16
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    bridge_enabled: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        special = (self.pad_id, self.bos_id, self.eos_id)
        if len(set(special)) != 3:
            raise ValueError(f"pad/bos/eos ids must be distinct, got {special}")
        if max(special) >= self.vocab_size or min(special) < 0:
            raise ValueError(f"pad/bos/eos ids {special} must lie in [0, {self.vocab_size})")

    @property
    def bridge_shape(self) -> tuple[int, int]:
        return (self.n_enc_layers * self.d_model, self.d_model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EncoderOutputs:
    layers: list[Tensor]
    src_mask: np.ndarray  # True at padding positions, batch x src_len

    def __post_init__(self):
        shapes = {t.shape for t in self.layers}
        if len(shapes) != 1:
            raise ValueError(f"encoder layer outputs disagree in shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.layers[0].shape


@dataclass
class BridgeWeights:
    per_decoder_layer: list[Tensor]

    def __len__(self) -> int:
        return len(self.per_decoder_layer)

    def __getitem__(self, i: int) -> Tensor:
        return self.per_decoder_layer[i]

    def named(self) -> dict[str, Tensor]:
        return {f"bridge.{i}.weight": w for i, w in enumerate(self.per_decoder_layer)}

    def arrays(self) -> list[np.ndarray]:
        return [w.data for w in self.per_decoder_layer]

    def n_parameters(self) -> int:
        return sum(w.size for w in self.per_decoder_layer)


def positional_encoding(max_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    rate = np.power(10000.0, -np.arange(0, d_model, 2) / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate)[:, : d_model // 2]
    return pe.astype(dtype)


# ---------------------------------------------------------------- parameters


def _layer_shapes(prefix: str, cfg: ModelConfig, attn_names) -> list[tuple[str, tuple]]:
    d, f = cfg.d_model, cfg.d_ff
    out = []
    for a in attn_names:
        for proj in "qkvo":
            out += [(f"{prefix}.{a}.{proj}.weight", (d, d)), (f"{prefix}.{a}.{proj}.bias", (d,))]
    out += [(f"{prefix}.ffn.fc1.weight", (d, f)), (f"{prefix}.ffn.fc1.bias", (f,)),
            (f"{prefix}.ffn.fc2.weight", (f, d)), (f"{prefix}.ffn.fc2.bias", (d,))]
    for k in range(len(attn_names) + 1):
        out += [(f"{prefix}.ln{k + 1}.gain", (d,)), (f"{prefix}.ln{k + 1}.offset", (d,))]
    return out


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    """Names and shapes of the transformer body, in a fixed order."""
    shapes = [("embed.weight", (cfg.vocab_size, cfg.d_model))]
    for i in range(cfg.n_enc_layers):
        shapes += _layer_shapes(f"enc.{i}", cfg, ["attn"])
    for i in range(cfg.n_dec_layers):
        shapes += _layer_shapes(f"dec.{i}", cfg, ["self_attn", "cross_attn"])
    shapes += [("out.weight", (cfg.d_model, cfg.vocab_size)), ("out.bias", (cfg.vocab_size,))]
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, body_init: str = "xavier",
                dtype=np.float32) -> dict[str, Tensor]:
    """Body parameters. ``xavier``: Glorot-uniform matrices, zero biases, unit
    norm gains. ``ones``: every matrix and gain is 1, biases and offsets 0."""
    if body_init not in ("xavier", "ones"):
        raise ValueError(f"body init must be 'xavier' or 'ones', got {body_init!r}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if name.endswith((".bias", ".offset")):
            arr = np.zeros(shape)
        elif name.endswith(".gain") or body_init == "ones":
            arr = np.ones(shape)
        else:
            a = xavier_bound(shape)
            arr = rng.uniform(-a, a, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


# ---------------------------------------------------------------- building blocks


def linear(x: Tensor, params, name: str, bias: bool = True) -> Tensor:
    y = T.matmul(x, params[f"{name}.weight"])
    return T.add(y, params[f"{name}.bias"]) if bias else y


def attention(x_q: Tensor, x_kv: Tensor, params, name: str, n_heads: int,
              key_mask: np.ndarray) -> Tensor:
    """Multi-head attention. ``key_mask`` is true where a key must be ignored and
    broadcasts to ``batch x heads x q_len x k_len``."""
    b, tq, d = x_q.shape
    tk = x_kv.shape[1]
    dh = d // n_heads

    def heads(t: Tensor, length: int) -> Tensor:
        return T.transpose(T.reshape(t, (b, length, n_heads, dh)), (0, 2, 1, 3))

    q = heads(linear(x_q, params, f"{name}.q"), tq)
    k = heads(linear(x_kv, params, f"{name}.k"), tk)
    v = heads(linear(x_kv, params, f"{name}.v"), tk)
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    probs = T.softmax(T.masked_fill(scores, key_mask, NEG_INF), axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, tq, d))
    return linear(ctx, params, f"{name}.o")


def _ffn(x: Tensor, params, name: str) -> Tensor:
    return linear(T.relu(linear(x, params, f"{name}.fc1")), params, f"{name}.fc2")


def _norm(x: Tensor, params, name: str, eps: float) -> Tensor:
    return T.layer_norm(x, params[f"{name}.gain"], params[f"{name}.offset"], eps)


def embed(tokens: np.ndarray, cfg: ModelConfig, params) -> Tensor:
    weight = params["embed.weight"]
    t = tokens.shape[1]
    pe = Tensor(positional_encoding(cfg.max_seq_len, cfg.d_model, weight.dtype)[:t])
    return T.add(T.scale(T.embedding(weight, tokens), np.sqrt(cfg.d_model)), pe)


def _check_tokens(tokens, cfg: ModelConfig, what: str) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise ValueError(f"{what} tokens must be batch x length, got shape {tokens.shape}")
    if tokens.shape[1] > cfg.max_seq_len:
        raise ValueError(f"{what} length {tokens.shape[1]} exceeds max_seq_len={cfg.max_seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError(f"{what} token ids must lie in [0, {cfg.vocab_size})")
    return tokens


# ---------------------------------------------------------------- forward passes


def encoder_forward(tokens, cfg: ModelConfig, params) -> EncoderOutputs:
    tokens = _check_tokens(tokens, cfg, "source")
    pad = tokens == cfg.pad_id
    key_mask = pad[:, None, None, :]
    x = embed(tokens, cfg, params)
    layers = []
    for i in range(cfg.n_enc_layers):
        p = f"enc.{i}"
        x = _norm(T.add(x, attention(x, x, params, f"{p}.attn", cfg.n_heads, key_mask)),
                  params, f"{p}.ln1", cfg.ln_eps)
        x = _norm(T.add(x, _ffn(x, params, f"{p}.ffn")), params, f"{p}.ln2", cfg.ln_eps)
        layers.append(x)
    return EncoderOutputs(layers, pad)


def concat_layers(enc: EncoderOutputs) -> Tensor:
    """Per-position concatenation of all encoder layers, lowest layer first."""
    return T.concat(enc.layers, axis=-1)


def bridge_forward(enc: EncoderOutputs, bridge: BridgeWeights, dec_layer_idx: int,
                   stacked: Tensor | None = None) -> Tensor:
    if not 0 <= dec_layer_idx < len(bridge):
        raise IndexError(f"decoder layer {dec_layer_idx} out of range for {len(bridge)} bridges")
    w = bridge[dec_layer_idx]
    width = len(enc.layers) * enc.shape[-1]
    if w.shape != (width, enc.shape[-1]):
        raise ValueError(f"bridge matrix {w.shape} does not fit {len(enc.layers)} encoder "
                         f"layers of width {enc.shape[-1]} (expected {(width, enc.shape[-1])})")
    if stacked is None:
        stacked = concat_layers(enc)
    return T.matmul(stacked, w)


def cross_attention_memories(enc: EncoderOutputs, bridge: BridgeWeights | None,
                             n_dec_layers: int) -> list[Tensor]:
    """Keys/values source of every decoder layer: the last encoder layer when
    there is no bridge, otherwise each layer's bridge output."""
    if bridge is None:
        return [enc.layers[-1]] * n_dec_layers
    stacked = concat_layers(enc)
    return [bridge_forward(enc, bridge, i, stacked) for i in range(n_dec_layers)]


def decoder_forward(tgt_tokens, enc: EncoderOutputs, bridge: BridgeWeights | None,
                    cfg: ModelConfig, params) -> Tensor:
    tgt = _check_tokens(tgt_tokens, cfg, "target")
    t = tgt.shape[1]
    causal = np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]
    src_mask = enc.src_mask[:, None, None, :]
    memories = cross_attention_memories(enc, bridge, cfg.n_dec_layers)
    x = embed(tgt, cfg, params)
    for i, memory in enumerate(memories):
        p = f"dec.{i}"
        x = _norm(T.add(x, attention(x, x, params, f"{p}.self_attn", cfg.n_heads, causal)),
                  params, f"{p}.ln1", cfg.ln_eps)
        x = _norm(T.add(x, attention(x, memory, params, f"{p}.cross_attn", cfg.n_heads, src_mask)),
                  params, f"{p}.ln2", cfg.ln_eps)
        x = _norm(T.add(x, _ffn(x, params, f"{p}.ffn")), params, f"{p}.ln3", cfg.ln_eps)
    return linear(x, params, "out")


class Seq2Seq:
    """Config, body parameters and an optional bridge, bundled."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor],
                 bridge: BridgeWeights | None = None):
        self.config = config
        self.params = params
        self.bridge = None
        if bridge is not None:
            self.attach_bridge(bridge)

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, body_init: str = "xavier",
               bridge_init: str | None = None, dtype=np.float32) -> Seq2Seq:
        params = init_params(config, seed, body_init, dtype)
        model = cls(config, params)
        if bridge_init is not None:
            model.attach_bridge(init_bridge(bridge_init, config.n_enc_layers,
                                            config.n_dec_layers, config.d_model, dtype))
        return model

    def attach_bridge(self, bridge: BridgeWeights) -> None:
        if len(bridge) != self.config.n_dec_layers:
            raise ValueError(f"{len(bridge)} bridge matrices for {self.config.n_dec_layers} "
                             "decoder layers")
        for w in bridge.per_decoder_layer:
            if w.shape != self.config.bridge_shape:
                raise ValueError(f"bridge matrix {w.shape}, expected {self.config.bridge_shape}")
        self.bridge = bridge
        self.config.bridge_enabled = True

    def detach_bridge(self) -> None:
        self.bridge = None
        self.config.bridge_enabled = False

    def parameters(self) -> dict[str, Tensor]:
        named = dict(self.params)
        if self.bridge is not None:
            named.update(self.bridge.named())
        return named

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def encode(self, src) -> EncoderOutputs:
        return encoder_forward(src, self.config, self.params)

    def decode(self, tgt_in, enc: EncoderOutputs) -> Tensor:
        return decoder_forward(tgt_in, enc, self.bridge, self.config, self.params)

    def forward(self, src, tgt_in) -> Tensor:
        return self.decode(tgt_in, self.encode(src))

    def loss(self, src, tgt_in, tgt_out) -> Tensor:
        return T.cross_entropy(self.forward(src, tgt_in), tgt_out, self.config.pad_id)


def greedy_decode(src_tokens, model: Seq2Seq, max_len: int) -> list[list[int]]:
    """Argmax decoding from bos until eos or ``max_len`` generated tokens.

    Returned sequences exclude bos and eos. Ties go to the lowest token id.
    """
    cfg = model.config
    src = np.asarray(src_tokens, dtype=np.int64)
    max_len = min(max_len, cfg.max_seq_len)
    n = src.shape[0]
    out = [[] for _ in range(n)]
    if max_len <= 0:
        return out
    with T.no_grad():
        enc = model.encode(src)
        prefix = np.full((n, 1), cfg.bos_id, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        for _ in range(max_len):
            logits = model.decode(prefix, enc).data[:, -1]
            nxt = logits.argmax(axis=-1)
            for r in np.flatnonzero(~done):
                if nxt[r] == cfg.eos_id:
                    done[r] = True
                else:
                    out[r].append(int(nxt[r]))
            if done.all() or prefix.shape[1] >= cfg.max_seq_len:
                break
            prefix = np.concatenate([prefix, np.where(done, cfg.pad_id, nxt)[:, None]], axis=1)
    return out
