"""CovNet: Transformer encoder, covariance information processing network (CIPN), decoder.

Token layout everywhere: a stacked real channel ``2n_a x n_t`` is a sequence
of ``2n_a`` delay-row tokens of width ``d = n_t``.

Variants
--------
``covnet``
    Full model: tailored (delay + angle) FFN, CIPN with a Transformer branch
    on ``q_bar`` and a fire-module CNN branch on ``c_bar``.
``modified_covnet``
    Ablation: delay-only FFN, CIPN replaced by a plain two-layer CNN on
    ``c_bar`` (no ``q_bar`` branch).
``no_covariance_baseline``
    Same encoder/decoder as ``covnet`` but the covariance vector fed to the
    decoder is all zeros and no CIPN exists.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor
from .transforms import cr_to_codeword_len

VARIANTS = ("covnet", "modified_covnet", "no_covariance_baseline")


@dataclass(frozen=True)
class ModelConfig:
    n_a: int = 32
    n_t: int = 32
    n_heads: int = 2
    codeword_len: int = 64
    n_encoder_blocks: int = 2
    n_decoder_blocks: int = 2
    n_cipn_blocks: int = 2
    ffn_hidden_delay: int = 64
    ffn_hidden_angle: int = 128
    cipn_vector_len: int = 256
    stem_channels: int = 8
    fire_configs: tuple[tuple[int, int, int], ...] = ((4, 8, 8), (4, 8, 8))
    variant: str = "covnet"
    pre_norm: bool = True
    causal_mask: bool = True
    positional_encoding: bool = False
    final_norm: bool = False  # layer norm after the last block of each stack
    zero_init_output: bool = True  # decoder output layer starts at zero
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_heads < 1 or self.n_t % self.n_heads:
            raise ConfigError(f"d_model={self.n_t} is not divisible by n_heads={self.n_heads}")
        if self.codeword_len < 1:
            raise ConfigError("codeword_len must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        object.__setattr__(self, "fire_configs", tuple(tuple(int(v) for v in f) for f in self.fire_configs))

    @property
    def d_model(self) -> int:
        return self.n_t

    @property
    def seq_len(self) -> int:
        return 2 * self.n_a

    @property
    def csi_len(self) -> int:
        return 2 * self.n_a * self.n_t

    @property
    def cr(self) -> int:
        return self.csi_len // self.codeword_len

    @classmethod
    def for_grid(cls, n_a: int, n_t: int, cr: int, **overrides) -> ModelConfig:
        """Defaults scaled to the grid: FFN widths 2x the axis, CIPN vector = csi_len / 8."""
        base = dict(
            n_a=n_a,
            n_t=n_t,
            codeword_len=cr_to_codeword_len(n_a, n_t, cr),
            ffn_hidden_delay=2 * n_t,
            ffn_hidden_angle=4 * n_a,
            cipn_vector_len=max(1, (2 * n_a * n_t) // 8),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fire_configs"] = [list(f) for f in self.fire_configs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        if "fire_configs" in d:
            d["fire_configs"] = tuple(tuple(f) for f in d["fire_configs"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


class Module:
    """Attribute-registered parameters; names follow attribute paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            p.assign_(state[name])

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype="float32"):
        self.weight = _uniform(rng, (d_in, d_out), d_in, d_out, dtype)
        self.bias = _zeros((d_out,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, dtype="float32"):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.shift = _zeros((d,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift)


class Identity(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return x


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1, padding: int = 0, dtype="float32"):
        self.kernel = _uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k, dtype)
        self.bias = _zeros((c_out,), dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias, self.stride, self.padding)

    def out_size(self, h: int) -> int:
        k = self.kernel.shape[-1]
        return (h + 2 * self.padding - k) // self.stride + 1


# ---------------------------------------------------------------------------
# attention and feed-forward blocks
# ---------------------------------------------------------------------------


def causal_mask(s_q: int, s_kv: int) -> np.ndarray:
    """True above the diagonal: query i may not look at keys j > i."""
    return np.triu(np.ones((s_q, s_kv), dtype=bool), k=1)


def multihead_attention(q_in: Tensor, kv_in: Tensor, params: "MultiHeadAttention", causal: bool = False) -> Tensor:
    """``[A_1, ..., A_h] W_O`` with ``A_n = softmax(Q_n K_n^T / sqrt(d_k)) V_n``.

    Queries come from ``q_in``, keys and values from ``kv_in``. The heads
    are the column blocks of the ``d x d`` projection matrices.
    """
    d = params.d
    h = params.n_heads
    if q_in.shape[-1] != d or kv_in.shape[-1] != d:
        raise ShapeError(f"attention width {d}: got query {q_in.shape}, key/value {kv_in.shape}")
    dk = d // h
    s_q, s_kv = q_in.shape[-2], kv_in.shape[-2]

    def heads(x: Tensor, s: int) -> Tensor:
        return x.reshape(x.shape[:-2] + (s, h, dk)).swapaxes(-3, -2)

    q = heads(T.linear(q_in, params.w_q, params.b_q), s_q)
    k = heads(T.linear(kv_in, params.w_k, params.b_k), s_kv)
    v = heads(T.linear(kv_in, params.w_v, params.b_v), s_kv)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dk))
    weights = T.softmax(logits, axis=-1, mask=causal_mask(s_q, s_kv) if causal else None)
    a = (weights @ v).swapaxes(-3, -2)
    a = a.reshape(a.shape[:-2] + (d,))
    return T.linear(a, params.w_o, params.b_o)


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng, dtype="float32"):
        if d % n_heads:
            raise ConfigError(f"d={d} not divisible by n_heads={n_heads}")
        self.d = d
        self.n_heads = n_heads
        self.w_q = _uniform(rng, (d, d), d, d, dtype)
        self.b_q = _zeros((d,), dtype)
        self.w_k = _uniform(rng, (d, d), d, d, dtype)
        self.b_k = _zeros((d,), dtype)
        self.w_v = _uniform(rng, (d, d), d, d, dtype)
        self.b_v = _zeros((d,), dtype)
        self.w_o = _uniform(rng, (d, d), d, d, dtype)
        self.b_o = _zeros((d,), dtype)

    def __call__(self, q_in: Tensor, kv_in: Tensor, causal: bool = False) -> Tensor:
        return multihead_attention(q_in, kv_in, self, causal)


class MLP(Module):
    def __init__(self, d: int, hidden: int, rng, dtype="float32"):
        self.fc1 = Linear(d, hidden, rng, dtype)
        self.fc2 = Linear(hidden, d, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class TailoredFFN(Module):
    """Two residual stages: per-row MLP on the delay rows, then per-column MLP on the angle columns."""

    def __init__(self, n_rows: int, n_t: int, hidden_delay: int, hidden_angle: int, rng, norm=True, dtype="float32"):
        self.shape = (n_rows, n_t)
        self.norm_delay = LayerNorm(n_t, dtype) if norm else Identity()
        self.delay = MLP(n_t, hidden_delay, rng, dtype)
        self.norm_angle = LayerNorm(n_rows, dtype) if norm else Identity()
        self.angle = MLP(n_rows, hidden_angle, rng, dtype)

    def stage_delay(self, x: Tensor) -> Tensor:
        return x + self.delay(self.norm_delay(x))

    def stage_angle(self, x: Tensor) -> Tensor:
        xt = x.swapaxes(-1, -2)
        return (xt + self.angle(self.norm_angle(xt))).swapaxes(-1, -2)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2:] != self.shape:
            raise ShapeError(f"tailored FFN expects trailing shape {self.shape}, got {x.shape}")
        return self.stage_angle(self.stage_delay(x))


def tailored_ffn(x: Tensor, params: TailoredFFN) -> Tensor:
    return params(x)


class ConventionalFFN(Module):
    """Per-row MLP on the delay rows only, with a residual connection."""

    def __init__(self, n_t: int, hidden: int, rng, norm=True, dtype="float32"):
        self.norm_delay = LayerNorm(n_t, dtype) if norm else Identity()
        self.delay = MLP(n_t, hidden, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.delay(self.norm_delay(x))


def _make_ffn(cfg: ModelConfig, rng, dtype) -> Module:
    if cfg.variant == "modified_covnet":
        return ConventionalFFN(cfg.n_t, cfg.ffn_hidden_delay, rng, cfg.pre_norm, dtype)
    return TailoredFFN(cfg.seq_len, cfg.n_t, cfg.ffn_hidden_delay, cfg.ffn_hidden_angle, rng, cfg.pre_norm, dtype)


def positional_encoding(s: int, d: int, dtype) -> np.ndarray:
    pos = np.arange(s)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


class EncoderBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.norm = LayerNorm(cfg.d_model, dtype) if cfg.pre_norm else Identity()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.ffn = _make_ffn(cfg, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        return self.ffn(x + self.attn(h, h))


class TransformerStack(Module):
    """Blocks of (self-attention + FFN) followed by a flatten and a linear map."""

    def __init__(self, cfg: ModelConfig, n_blocks: int, out_len: int, rng, dtype):
        self.blocks = [EncoderBlock(cfg, rng, dtype) for _ in range(n_blocks)]
        self.norm = LayerNorm(cfg.d_model, dtype) if cfg.pre_norm and cfg.final_norm else Identity()
        self.out = Linear(cfg.csi_len, out_len, rng, dtype)
        self._pe = positional_encoding(cfg.seq_len, cfg.d_model, dtype) if cfg.positional_encoding else None

    def __call__(self, x: Tensor) -> Tensor:
        if self._pe is not None:
            x = x + self._pe
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return self.out(x.reshape(x.shape[:-2] + (-1,)))


class Fire(Module):
    """Squeeze 1x1 conv, then parallel 1x1 and 3x3 expand convs concatenated on channels."""

    def __init__(self, c_in: int, squeeze: int, expand1: int, expand3: int, rng, dtype):
        self.squeeze = Conv2d(c_in, squeeze, 1, rng, dtype=dtype)
        self.expand1 = Conv2d(squeeze, expand1, 1, rng, dtype=dtype)
        self.expand3 = Conv2d(squeeze, expand3, 3, rng, padding=1, dtype=dtype)

    @property
    def out_channels(self) -> int:
        return self.expand1.kernel.shape[0] + self.expand3.kernel.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        s = T.relu(self.squeeze(x))
        return T.concat([T.relu(self.expand1(s)), T.relu(self.expand3(s))], axis=-3)


class SqueezeBranch(Module):
    """Stem conv (3x3, stride 2) -> 2x2 max pool -> fire modules -> global average pool."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.stem = Conv2d(4, cfg.stem_channels, 3, rng, stride=2, padding=1, dtype=dtype)
        c = cfg.stem_channels
        self.fires = []
        for squeeze, e1, e3 in cfg.fire_configs:
            fire = Fire(c, squeeze, e1, e3, rng, dtype)
            self.fires.append(fire)
            c = fire.out_channels
        self.out_channels = c

    def __call__(self, c: Tensor) -> Tensor:
        x = T.relu(self.stem(c))
        x = T.max_pool2d(x, 2, 2)
        for fire in self.fires:
            x = fire(x)
        return x.mean(axis=(-2, -1))


class PlainCNN(Module):
    """Two stride-2 3x3 conv layers and a linear map (modified-CovNet CIPN)."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        c = cfg.stem_channels
        self.conv1 = Conv2d(4, c, 3, rng, stride=2, padding=1, dtype=dtype)
        self.conv2 = Conv2d(c, c, 3, rng, stride=2, padding=1, dtype=dtype)
        side = self.conv2.out_size(self.conv1.out_size(cfg.n_t))
        self.out = Linear(c * side * side, cfg.csi_len, rng, dtype)

    def __call__(self, c: Tensor) -> Tensor:
        x = T.relu(self.conv2(T.relu(self.conv1(c))))
        return self.out(x.reshape(x.shape[:-3] + (-1,)))


class CIPN(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.branch_q = TransformerStack(cfg, cfg.n_cipn_blocks, cfg.cipn_vector_len, rng, dtype)
        self.branch_c = SqueezeBranch(cfg, rng, dtype)
        self.out = Linear(cfg.cipn_vector_len + self.branch_c.out_channels, cfg.csi_len, rng, dtype)

    def __call__(self, q: Tensor, c: Tensor) -> Tensor:
        v_a = self.branch_q(q)
        v_b = self.branch_c(c)
        return self.out(T.concat([v_a, v_b], axis=-1))


class ModifiedCIPN(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.cnn = PlainCNN(cfg, rng, dtype)

    def __call__(self, q: Tensor, c: Tensor) -> Tensor:
        return self.cnn(c)


class DecoderBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        norm = (lambda: LayerNorm(cfg.d_model, dtype)) if cfg.pre_norm else Identity
        self.norm_self = norm()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.norm_query = norm()
        self.norm_memory = norm()
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.ffn = _make_ffn(cfg, rng, dtype)
        self.causal = cfg.causal_mask

    def __call__(self, z: Tensor, y: Tensor) -> Tensor:
        h = self.norm_self(z)
        z = z + self.self_attn(h, h, causal=self.causal)
        z = z + self.cross_attn(self.norm_query(z), self.norm_memory(y))
        return self.ffn(z)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.cfg = cfg
        self.inp = Linear(cfg.csi_len + cfg.codeword_len, cfg.csi_len, rng, dtype)
        self.blocks = [DecoderBlock(cfg, rng, dtype) for _ in range(cfg.n_decoder_blocks)]
        self.norm = LayerNorm(cfg.d_model, dtype) if cfg.pre_norm and cfg.final_norm else Identity()
        self.out = Linear(cfg.d_model, cfg.n_t, rng, dtype)
        if cfg.zero_init_output:
            # a random output map starts far from the data and training first
            # has to collapse it; starting from zero avoids that plateau
            self.out.weight.assign_(np.zeros_like(self.out.weight.data))
        self._pe = positional_encoding(cfg.seq_len, cfg.d_model, dtype) if cfg.positional_encoding else None

    def __call__(self, v: Tensor, v_c: Tensor) -> Tensor:
        cfg = self.cfg
        y = self.inp(T.concat([v_c, v], axis=-1))
        y = y.reshape(y.shape[:-1] + (cfg.seq_len, cfg.d_model))
        if self._pe is not None:
            y = y + self._pe
        z = y
        for block in self.blocks:
            z = block(z, y)
        return self.out(self.norm(z))


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


class CovNet(Module):
    """Encoder at the UE, CIPN and decoder at the BS.

    Inputs are numpy arrays or tensors with leading batch axes:
    ``h`` and ``q`` are ``(..., 2n_a, n_t)``, ``c`` is ``(..., 4, n_t, n_t)``.
    Fixed input scalings (not learned) bring every input to O(1) entries:
    ``h * sqrt(n_a n_t)``, ``q * sqrt(n_t)``, and ``c`` divided by its own
    Frobenius norm then times ``n_t``. The decoder output is mapped back to
    the scale of ``h``.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        dtype = cfg.dtype
        self.encoder = TransformerStack(cfg, cfg.n_encoder_blocks, cfg.codeword_len, rng, dtype)
        if cfg.variant == "covnet":
            self.cipn = CIPN(cfg, rng, dtype)
        elif cfg.variant == "modified_covnet":
            self.cipn = ModifiedCIPN(cfg, rng, dtype)
        else:
            self.cipn = None
        self.decoder = Decoder(cfg, rng, dtype)
        self.h_scale = math.sqrt(cfg.n_a * cfg.n_t)
        self.q_scale = math.sqrt(cfg.n_t)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def _tensor(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=self.dtype))

    def _check(self, x: Tensor, trailing: tuple[int, ...], what: str) -> None:
        if x.shape[-len(trailing) :] != trailing:
            raise ShapeError(f"{what}: expected trailing shape {trailing}, got {x.shape}")

    def encode(self, h) -> Tensor:
        cfg = self.cfg
        h = self._tensor(h)
        self._check(h, (cfg.seq_len, cfg.n_t), "encode")
        return self.encoder(h * self.h_scale)

    def covariance_vector(self, q, c) -> Tensor:
        """``v_c`` of length ``2 n_a n_t``."""
        cfg = self.cfg
        q, c = self._tensor(q), self._tensor(c)
        self._check(q, (cfg.seq_len, cfg.n_t), "cipn q_bar")
        self._check(c, (4, cfg.n_t, cfg.n_t), "cipn c_bar")
        if self.cipn is None:
            return Tensor(np.zeros(q.shape[:-2] + (cfg.csi_len,), dtype=self.dtype))
        norm = np.sqrt(np.sum(c.data.astype(np.float64) ** 2, axis=(-3, -2, -1), keepdims=True))
        c_scale = (cfg.n_t / np.maximum(norm, 1e-12)).astype(self.dtype)
        return self.cipn(q * self.q_scale, c * c_scale)

    def decode(self, v, v_c) -> Tensor:
        cfg = self.cfg
        v, v_c = self._tensor(v), self._tensor(v_c)
        if v.shape[-1] != cfg.codeword_len or v_c.shape[-1] != cfg.csi_len:
            raise ShapeError(
                f"decode: codeword {v.shape} / covariance vector {v_c.shape}, "
                f"expected lengths {cfg.codeword_len} and {cfg.csi_len}"
            )
        return self.decoder(v, v_c) * (1.0 / self.h_scale)

    def __call__(self, h, q, c) -> Tensor:
        return self.decode(self.encode(h), self.covariance_vector(q, c))

    def predict(self, h, q, c, batch_size: int = 250) -> np.ndarray:
        """Forward pass without building a graph, in chunks of ``batch_size``."""
        h, q, c = np.asarray(h), np.asarray(q), np.asarray(c)
        out = []
        with T.no_grad():
            for s in range(0, h.shape[0], batch_size):
                out.append(self(h[s : s + batch_size], q[s : s + batch_size], c[s : s + batch_size]).numpy())
        return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------


def linear_flops(s: int, d_in: int, d_out: int) -> int:
    return 2 * s * d_in * d_out


def conv_flops(c_in: int, c_out: int, kh: int, kw: int, h_out: int, w_out: int) -> int:
    return 2 * c_in * c_out * kh * kw * h_out * w_out


def attention_flops(s_q: int, s_kv: int, d: int) -> int:
    """Four d x d projections plus the score and weighted-sum products (2*s_q*s_kv*d each)."""
    proj = 2 * linear_flops(s_q, d, d) + 2 * linear_flops(s_kv, d, d)
    return proj + 2 * (2 * s_q * s_kv * d)


def _ffn_flops(cfg: ModelConfig) -> int:
    s, d = cfg.seq_len, cfg.n_t
    delay = linear_flops(s, d, cfg.ffn_hidden_delay) + linear_flops(s, cfg.ffn_hidden_delay, d)
    if cfg.variant == "modified_covnet":
        return delay
    angle = linear_flops(d, s, cfg.ffn_hidden_angle) + linear_flops(d, cfg.ffn_hidden_angle, s)
    return delay + angle


def _stack_flops(cfg: ModelConfig, n_blocks: int, out_len: int) -> int:
    s, d = cfg.seq_len, cfg.d_model
    block = attention_flops(s, s, d) + _ffn_flops(cfg)
    return n_blocks * block + linear_flops(1, cfg.csi_len, out_len)


def _conv_out(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def estimate_flops(cfg: ModelConfig) -> dict[str, int]:
    """Multiply-add operation counts (2 per MAC) of the matrix products and convolutions.

    Normalisation, softmax, activations and bias additions are not counted.
    """
    s, d = cfg.seq_len, cfg.d_model
    encoder = _stack_flops(cfg, cfg.n_encoder_blocks, cfg.codeword_len)

    cipn = 0
    if cfg.variant == "covnet":
        cipn += _stack_flops(cfg, cfg.n_cipn_blocks, cfg.cipn_vector_len)
        side = _conv_out(cfg.n_t, 3, 2, 1)
        cipn += conv_flops(4, cfg.stem_channels, 3, 3, side, side)
        side = _conv_out(side, 2, 2, 0)
        c = cfg.stem_channels
        for squeeze, e1, e3 in cfg.fire_configs:
            cipn += conv_flops(c, squeeze, 1, 1, side, side)
            cipn += conv_flops(squeeze, e1, 1, 1, side, side) + conv_flops(squeeze, e3, 3, 3, side, side)
            c = e1 + e3
        cipn += linear_flops(1, cfg.cipn_vector_len + c, cfg.csi_len)
    elif cfg.variant == "modified_covnet":
        c = cfg.stem_channels
        side1 = _conv_out(cfg.n_t, 3, 2, 1)
        side2 = _conv_out(side1, 3, 2, 1)
        cipn += conv_flops(4, c, 3, 3, side1, side1) + conv_flops(c, c, 3, 3, side2, side2)
        cipn += linear_flops(1, c * side2 * side2, cfg.csi_len)

    block = attention_flops(s, s, d) + attention_flops(s, s, d) + _ffn_flops(cfg)
    decoder = linear_flops(1, cfg.csi_len + cfg.codeword_len, cfg.csi_len)
    decoder += cfg.n_decoder_blocks * block + linear_flops(s, d, cfg.n_t)
    return {"encoder": encoder, "cipn": cipn, "decoder": decoder, "total": encoder + cipn + decoder}
