"""Dual-encoder sequence model predicting engine torque, speed and fuel.

Two transformer encoders run side by side: one digests the p sample
primitives (reduced over the primitive axis by a learned averaging layer)
into a global-context memory, the other encodes the latest history chunk
into a local-context memory. A masked transformer decoder takes the known
future features (v, a, theta) as queries against the concatenated memories
and a final linear layer emits the missing future features (T, S, f).

Everything runs in float64 on CPU; the model artifact is a single binary
file with a JSON header and raw little-endian tensor payload, so a
save/load round trip is bit identical.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, DataError
from .grid import FeatureStats

MAGIC = b"NVF1"
FORMAT_VERSION = 1
_MASKED = -1e30  # additive mask value; finite so fully masked rows stay uniform


@dataclass(frozen=True)
class NvFormerConfig:
    """Architecture hyperparameters. d_ff defaults to 4 * d_model."""

    d_model: int = 64
    heads: int = 8
    n_s: int = 2            # sample-former encoder layers
    n_i: int = 2            # inference-former encoder and decoder layers
    l_h: int = 40
    l_f: int = 60
    m: int = 6
    m_f: int = 3
    m_r: int = 3
    p: int = 10
    d_ff: int | None = None
    dropout: float = 0.1
    sample_former_enabled: bool = True

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.m != self.m_f + self.m_r:
            raise ConfigError("m must equal m_f + m_r")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if min(self.n_s, self.n_i, self.l_h, self.l_f, self.p) < 1:
            raise ConfigError("layer counts, lengths and p must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NvFormerConfig":
        known = cls.__dataclass_fields__.keys()
        extra = set(d) - set(known)
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)


TOY_CONFIG = NvFormerConfig(d_model=16, heads=2, n_s=1, n_i=1,
                            l_h=8, l_f=6, m=6, m_f=3, m_r=3, p=3,
                            dropout=0.0)


def positional_encoding(length: int, d_model: int) -> torch.Tensor:
    """Sinusoidal position code: sin on even columns, cos on odd ones."""
    if length < 1 or d_model < 1:
        raise ConfigError("length and d_model must be positive")
    position = torch.arange(length).unsqueeze(1).to(torch.float64)
    i2 = torch.arange(0, d_model, 2).to(torch.float64)
    div = torch.exp(i2 * (-math.log(10000.0) / d_model))
    pe = torch.zeros(length, d_model)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: (d_model // 2)])
    return pe


def causal_mask(length: int) -> torch.Tensor:
    """Additive mask hiding positions after the query index."""
    mask = torch.full((length, length), _MASKED)
    return torch.triu(mask, diagonal=1)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with learned projections.

    The additive mask uses a large negative constant instead of -inf, so a
    fully masked query row degrades to uniform weights rather than NaN.
    """

    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % heads:
            raise ConfigError("d_model must be divisible by heads")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.d_head).transpose(1, 2)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                mask: torch.Tensor | None = None, return_weights: bool = False):
        if q.dim() == 2:  # allow unbatched use
            out = self.forward(q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0),
                               mask, return_weights)
            if return_weights:
                return out[0].squeeze(0), out[1].squeeze(0)
            return out.squeeze(0)
        if q.shape[-1] != self.d_model or k.shape != v.shape:
            raise DataError("attention shape mismatch")
        qh, kh, vh = self._split(self.w_q(q)), self._split(self.w_k(k)), \
            self._split(self.w_v(v))
        scores = qh @ kh.transpose(-2, -1) / math.sqrt(self.d_head)
        if mask is not None:
            if mask.shape != (q.shape[1], k.shape[1]):
                raise DataError("mask shape mismatch")
            scores = scores + mask
        weights = torch.softmax(scores, dim=-1)
        out = self.dropout(weights) @ vh
        out = out.transpose(1, 2).reshape(q.shape[0], q.shape[1], self.d_model)
        out = self.w_o(out)
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    """Two-layer GELU MLP; smooth activation keeps finite differences clean."""

    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.act = nn.GELU()
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.dropout(self.act(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: NvFormerConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, x, x)))
        return self.norm2(x + self.dropout(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: NvFormerConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x, mask)))
        x = self.norm2(x + self.dropout(self.cross_attn(x, memory, memory)))
        return self.norm3(x + self.dropout(self.ff(x)))


class FeatureEmbedding(nn.Module):
    """Linear lift to d_model plus sinusoidal position code."""

    def __init__(self, n_features: int, d_model: int, max_len: int,
                 dropout: float = 0.0):
        super().__init__()
        self.fc = nn.Linear(n_features, d_model)
        self.dropout = nn.Dropout(dropout)
        self.register_buffer("pe", positional_encoding(max_len, d_model),
                             persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[-2]
        return self.dropout(self.fc(x) + self.pe[:n])


class SampleReducer(nn.Module):
    """Learned linear collapse of the primitive axis, initialized to a mean."""

    def __init__(self, p: int):
        super().__init__()
        self.p = p
        self.weight = nn.Parameter(torch.full((p,), 1.0 / p))
        self.bias = nn.Parameter(torch.zeros(()))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.p:
            raise DataError(f"expected {self.p} primitives, got {x.shape[-3]}")
        return torch.einsum("...ptm,p->...tm", x, self.weight) + self.bias


class NvFormerNet(nn.Module):
    """The bare network; NvFormerModel wraps it with stats and IO."""

    def __init__(self, cfg: NvFormerConfig):
        super().__init__()
        self.cfg = cfg
        max_len = max(cfg.l_h, cfg.l_f)
        self.reducer = SampleReducer(cfg.p)
        self.embed_samples = FeatureEmbedding(cfg.m, cfg.d_model, max_len,
                                              cfg.dropout)
        self.embed_history = FeatureEmbedding(cfg.m, cfg.d_model, max_len,
                                              cfg.dropout)
        self.embed_future = FeatureEmbedding(cfg.m_f, cfg.d_model, max_len,
                                             cfg.dropout)
        self.sample_layers = nn.ModuleList(
            EncoderLayer(cfg) for _ in range(cfg.n_s))
        self.inference_layers = nn.ModuleList(
            EncoderLayer(cfg) for _ in range(cfg.n_i))
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(cfg) for _ in range(cfg.n_i))
        self.out_fc = nn.Linear(cfg.d_model, cfg.m_r)
        self.register_buffer("mask", causal_mask(cfg.l_f), persistent=False)
        self.double()  # the whole pipeline runs in float64

    def encode(self, primitives: torch.Tensor,
               history: torch.Tensor) -> torch.Tensor:
        """Memories for the decoder: concat(sample, inference) or inference only."""
        h = self.embed_history(history)
        for layer in self.inference_layers:
            h = layer(h)
        if not self.cfg.sample_former_enabled:
            return h
        s = self.embed_samples(self.reducer(primitives))
        for layer in self.sample_layers:
            s = layer(s)
        return torch.cat([s, h], dim=-2)

    def decode(self, future_known: torch.Tensor,
               memory: torch.Tensor) -> torch.Tensor:
        x = self.embed_future(future_known)
        for layer in self.decoder_layers:
            x = layer(x, memory, self.mask)
        return self.out_fc(x)

    def forward(self, primitives: torch.Tensor, history: torch.Tensor,
                future_known: torch.Tensor) -> torch.Tensor:
        return self.decode(future_known, self.encode(primitives, history))


def _init_weights(net: NvFormerNet, seed: int) -> None:
    torch.manual_seed(seed)
    for module in net.modules():
        if isinstance(module, nn.Linear):
            nn.init.xavier_uniform_(module.weight)
            nn.init.zeros_(module.bias)
    with torch.no_grad():  # re-assert the averaging start of the reducer
        net.reducer.weight.fill_(1.0 / net.cfg.p)
        net.reducer.bias.zero_()


def mse_loss(pred, target) -> float:
    """Mean squared error over every entry of equal-shape arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


class NvFormerModel:
    """Network plus its training stats and config, the unit that is saved."""

    def __init__(self, config: NvFormerConfig, stats: FeatureStats,
                 seed: int = 0):
        self.config = config
        self.stats = stats
        self.net = NvFormerNet(config)
        _init_weights(self.net, seed)
        self.net.eval()

    def _check(self, arr, shape, name) -> torch.Tensor:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != shape:
            raise DataError(f"{name} must have shape {shape}, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError(f"{name} contains non-finite values")
        return torch.from_numpy(arr.copy())

    def forward(self, sample_primitives, history, future_known) -> np.ndarray:
        """Single prediction on normalized inputs -> (l_f, m_r), normalized."""
        cfg = self.config
        prim = self._check(sample_primitives, (cfg.p, cfg.l_h, cfg.m),
                           "sample_primitives")
        hist = self._check(history, (cfg.l_h, cfg.m), "history")
        fut = self._check(future_known, (cfg.l_f, cfg.m_f), "future_known")
        self.net.eval()
        with torch.no_grad():
            out = self.net(prim.unsqueeze(0), hist.unsqueeze(0),
                           fut.unsqueeze(0))
        return out.squeeze(0).numpy()

    def predict_norm(self, primitives, history, futures) -> np.ndarray:
        """Batch prediction sharing one encoder pass -> (B, l_f, m_r)."""
        cfg = self.config
        prim = self._check(primitives, (cfg.p, cfg.l_h, cfg.m), "primitives")
        hist = self._check(history, (cfg.l_h, cfg.m), "history")
        futures = np.asarray(futures, dtype=np.float64)
        if futures.ndim != 3 or futures.shape[1:] != (cfg.l_f, cfg.m_f):
            raise DataError(f"futures must be (B, {cfg.l_f}, {cfg.m_f})")
        fut = self._check(futures, futures.shape, "futures")
        self.net.eval()
        with torch.no_grad():
            memory = self.net.encode(prim.unsqueeze(0), hist.unsqueeze(0))
            out = self.net.decode(fut, memory.expand(fut.shape[0], -1, -1))
        return out.numpy()

    def state_bytes(self) -> bytes:
        chunks = []
        for name in sorted(self.net.state_dict()):
            t = self.net.state_dict()[name]
            chunks.append(t.detach().numpy().astype("<f8").tobytes())
        return b"".join(chunks)

    def save(self, path) -> None:
        state = self.net.state_dict()
        names = sorted(state)
        tensors, payload, offset = [], [], 0
        for name in names:
            arr = state[name].detach().numpy().astype("<f8")
            raw = arr.tobytes()
            tensors.append({"name": name, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
            payload.append(raw)
            offset += len(raw)
        header = json.dumps({
            "version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "stats": self.stats.to_dict(),
            "tensors": tensors,
        }, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(b"".join(payload))

    @classmethod
    def load(cls, path) -> "NvFormerModel":
        path = Path(path)
        blob = path.read_bytes()
        if blob[:4] != MAGIC:
            raise DataError(f"{path}: not a model artifact (bad magic)")
        if len(blob) < 12:
            raise DataError(f"{path}: truncated artifact")
        (header_len,) = struct.unpack("<Q", blob[4:12])
        header_end = 12 + header_len
        if len(blob) < header_end:
            raise DataError(f"{path}: truncated header")
        try:
            header = json.loads(blob[12:header_end])
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: corrupt header") from exc
        if header.get("version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported artifact version "
                            f"{header.get('version')}")
        config = NvFormerConfig.from_dict(header["config"])
        stats = FeatureStats.from_dict(header["stats"])
        model = cls(config, stats, seed=0)
        state = {}
        payload = blob[header_end:]
        for spec in header["tensors"]:
            lo, hi = spec["offset"], spec["offset"] + spec["nbytes"]
            if hi > len(payload):
                raise DataError(f"{path}: truncated tensor payload")
            arr = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(
                spec["shape"]).copy()
            state[spec["name"]] = torch.from_numpy(arr)
        missing = set(model.net.state_dict()) - set(state)
        if missing:
            raise DataError(f"{path}: missing tensors {sorted(missing)}")
        model.net.load_state_dict(state)
        model.net.eval()
        return model

    def with_sample_former(self, enabled: bool) -> "NvFormerModel":
        """Same weights, toggled global-context path (ablation switch)."""
        clone = NvFormerModel(replace(self.config,
                                      sample_former_enabled=enabled),
                              self.stats, seed=0)
        clone.net.load_state_dict(self.net.state_dict())
        clone.net.eval()
        return clone
