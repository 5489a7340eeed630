"""Transformer encoder with decoupled input/output embeddings.

The input embedding is narrow (E_in <= H) and projected up to the hidden
width; the output embedding used by the masked-LM head is wide (E_out >= H)
and dropped entirely when a model is exported for regression scoring. The
regression head is a single linear layer on the [CLS] vector.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import numcore as nc
from .tokenizer import EncodedPair

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    hidden: int
    input_emb_dim: int
    output_emb_dim: int
    heads: int
    head_dim: int
    vocab_size: int
    max_len: int
    ffn_dim: int = 0  # 0 means the 4*hidden default
    dropout: float = 0.0

    def __post_init__(self):
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden)
        problems = []
        if self.layers < 0:
            problems.append(f"layers must be >= 0, got {self.layers}")
        if self.hidden != self.heads * self.head_dim:
            problems.append(
                f"hidden ({self.hidden}) != heads*head_dim "
                f"({self.heads}*{self.head_dim}={self.heads * self.head_dim})"
            )
        if self.input_emb_dim > self.hidden:
            problems.append(
                f"input_emb_dim ({self.input_emb_dim}) exceeds hidden ({self.hidden})"
            )
        if self.output_emb_dim < self.hidden:
            problems.append(
                f"output_emb_dim ({self.output_emb_dim}) below hidden ({self.hidden})"
            )
        if self.vocab_size < 5:
            problems.append(f"vocab_size must be >= 5, got {self.vocab_size}")
        if self.max_len < 8:
            problems.append(f"max_len must be >= 8, got {self.max_len}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must be in [0, 1), got {self.dropout}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class Batch:
    """Stacked encoder inputs."""

    ids: np.ndarray  # (B, T) int32
    mask: np.ndarray  # (B, T) float32
    segments: np.ndarray  # (B, T) int32

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


def pack_batch(pairs: Sequence[EncodedPair], width: int | None = None) -> Batch:
    """Stack encoded pairs; optionally crop trailing padding to ``width``."""
    if not pairs:
        raise ValueError("cannot pack an empty batch")
    ids = np.stack([p.ids for p in pairs])
    mask = np.stack([p.mask for p in pairs])
    segments = np.stack([p.segments for p in pairs])
    if width is not None:
        longest = int(mask.sum(axis=1).max())
        if width < longest:
            raise ValueError(f"crop width {width} below longest member {longest}")
        ids, mask, segments = ids[:, :width], mask[:, :width], segments[:, :width]
    return Batch(ids=ids, mask=mask, segments=segments)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------


def _encoder_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    h, e_in, f = cfg.hidden, cfg.input_emb_dim, cfg.ffn_dim
    shapes = [
        ("embed.token", (cfg.vocab_size, e_in)),
        ("embed.position", (cfg.max_len, e_in)),
        ("embed.segment", (2, e_in)),
        ("embed.norm.gain", (e_in,)),
        ("embed.norm.bias", (e_in,)),
        ("embed.proj.weight", (e_in, h)),
        ("embed.proj.bias", (h,)),
    ]
    for i in range(cfg.layers):
        p = f"block{i}"
        for part in ("query", "key", "value", "out"):
            shapes.append((f"{p}.attn.{part}.weight", (h, h)))
            shapes.append((f"{p}.attn.{part}.bias", (h,)))
        shapes.append((f"{p}.norm1.gain", (h,)))
        shapes.append((f"{p}.norm1.bias", (h,)))
        shapes.append((f"{p}.ffn.grow.weight", (h, f)))
        shapes.append((f"{p}.ffn.grow.bias", (f,)))
        shapes.append((f"{p}.ffn.shrink.weight", (f, h)))
        shapes.append((f"{p}.ffn.shrink.bias", (h,)))
        shapes.append((f"{p}.norm2.gain", (h,)))
        shapes.append((f"{p}.norm2.bias", (h,)))
    return shapes


def _head_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    return [("head.weight", (cfg.hidden, 1)), ("head.bias", (1,))]


def _mlm_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    e_out = cfg.output_emb_dim
    return [
        ("mlm.dense.weight", (cfg.hidden, e_out)),
        ("mlm.dense.bias", (e_out,)),
        ("mlm.norm.gain", (e_out,)),
        ("mlm.norm.bias", (e_out,)),
        ("mlm.out.weight", (e_out, cfg.vocab_size)),
        ("mlm.out.bias", (cfg.vocab_size,)),
    ]


def param_count(config: EncoderConfig, phase: str) -> int:
    """Exact scalar count for a phase.

    ``pretraining`` counts the trunk plus the masked-LM head; ``fine-tuning``
    counts the trunk plus the scalar regression head (the wide output
    embedding is gone).
    """
    if phase not in ("pretraining", "fine-tuning"):
        raise ValueError(f"phase must be 'pretraining' or 'fine-tuning', got {phase!r}")
    shapes = _encoder_shapes(config)
    shapes += _mlm_shapes(config) if phase == "pretraining" else _head_shapes(config)
    return sum(int(np.prod(s)) for _, s in shapes)


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    for _ in range(8):
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    np.clip(out, -2.0 * std, 2.0 * std, out=out)
    return out.astype(np.float32)


def init_model(config: EncoderConfig, seed: int) -> "MetricModel":
    """Fresh model: weights ~ truncated normal(0, 0.02), biases 0, norms 1."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, nc.Parameter] = {}
    shapes = _encoder_shapes(config) + _head_shapes(config) + _mlm_shapes(config)
    for name, shape in shapes:
        if name.endswith(".gain"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = _trunc_normal(rng, shape, 0.02)
        params[name] = nc.Parameter(name, data)
    return MetricModel(config, params, has_mlm_head=True)


class MetricModel:
    """Encoder trunk plus regression head and optional masked-LM head."""

    def __init__(
        self,
        config: EncoderConfig,
        params: dict[str, nc.Parameter],
        has_mlm_head: bool,
    ):
        self.config = config
        self.params = params
        self.has_mlm_head = has_mlm_head
        expected = _encoder_shapes(config) + _head_shapes(config)
        if has_mlm_head:
            expected += _mlm_shapes(config)
        for name, shape in expected:
            if name not in params:
                raise ConfigError(f"missing parameter {name}")
            if params[name].data.shape != shape:
                raise ConfigError(
                    f"parameter {name} has shape {params[name].data.shape}, "
                    f"expected {shape}"
                )
        if len(params) != len(expected):
            extras = set(params) - {n for n, _ in expected}
            raise ConfigError(f"unexpected parameters: {sorted(extras)}")
        self._order = [name for name, _ in expected]

    # -- plumbing ------------------------------------------------------------

    def parameters(self) -> list[nc.Parameter]:
        return [self.params[n] for n in self._order]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: self.params[n].data for n in self._order}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n in self._order:
            self.params[n].data = arrays[n].astype(self.params[n].data.dtype)

    def clone(self) -> "MetricModel":
        params = {
            n: nc.Parameter(n, self.params[n].data.copy()) for n in self._order
        }
        return MetricModel(self.config, params, self.has_mlm_head)

    def astype(self, dtype) -> "MetricModel":
        params = {
            n: nc.Parameter(n, self.params[n].data.astype(dtype)) for n in self._order
        }
        return MetricModel(self.config, params, self.has_mlm_head)

    def drop_mlm_head(self) -> "MetricModel":
        keep = [n for n, _ in _encoder_shapes(self.config) + _head_shapes(self.config)]
        params = {n: nc.Parameter(n, self.params[n].data.copy()) for n in keep}
        return MetricModel(self.config, params, has_mlm_head=False)

    def _p(self, name: str) -> nc.Tensor:
        return self.params[name].value

    # -- forward -------------------------------------------------------------

    def _maybe_dropout(self, x: nc.Tensor, train: bool, rng) -> nc.Tensor:
        rate = self.config.dropout
        if not train or rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout requires an rng in training mode")
        keep = (rng.random(x.shape) >= rate).astype(np.float32) / (1.0 - rate)
        return nc.mul(x, nc.Tensor(keep))

    def forward_hidden(self, batch: Batch, train: bool = False, rng=None) -> nc.Tensor:
        """Final-layer hidden states, shape (B, T, H)."""
        cfg = self.config
        b, t = batch.ids.shape
        if b == 0:
            raise ValueError("batch is empty")
        if t > cfg.max_len:
            raise ValueError(f"batch width {t} exceeds max_len {cfg.max_len}")
        if batch.ids.max() >= cfg.vocab_size:
            raise IndexError(
                f"token id {int(batch.ids.max())} out of range for vocab "
                f"{cfg.vocab_size}"
            )
        positions = np.broadcast_to(np.arange(t), (b, t))
        x = nc.add(
            nc.embedding_gather(self._p("embed.token"), batch.ids),
            nc.embedding_gather(self._p("embed.position"), positions),
        )
        x = nc.add(x, nc.embedding_gather(self._p("embed.segment"), batch.segments))
        x = nc.layer_norm(x, self._p("embed.norm.gain"), self._p("embed.norm.bias"))
        x = self._maybe_dropout(x, train, rng)
        x = nc.add(
            nc.matmul(x, self._p("embed.proj.weight")), self._p("embed.proj.bias")
        )
        key_mask = batch.mask[:, None, None, :]  # masks PAD keys for every query
        for i in range(cfg.layers):
            x = self._block(x, i, key_mask, train, rng)
        return x

    def _block(self, x: nc.Tensor, i: int, key_mask, train: bool, rng) -> nc.Tensor:
        cfg = self.config
        b, t, h = x.shape
        a, d = cfg.heads, cfg.head_dim
        p = f"block{i}"

        def proj(part: str, src: nc.Tensor) -> nc.Tensor:
            w = self._p(f"{p}.attn.{part}.weight")
            return nc.add(nc.matmul(src, w), self._p(f"{p}.attn.{part}.bias"))

        def split_heads(src: nc.Tensor) -> nc.Tensor:
            return nc.transpose(nc.reshape(src, (b, t, a, d)), (0, 2, 1, 3))

        q = split_heads(proj("query", x))
        k = split_heads(proj("key", x))
        v = split_heads(proj("value", x))
        scores = nc.scale(nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))), d**-0.5)
        probs = nc.masked_softmax(scores, key_mask)
        probs = self._maybe_dropout(probs, train, rng)
        ctx = nc.reshape(nc.transpose(nc.matmul(probs, v), (0, 2, 1, 3)), (b, t, h))
        attn_out = proj("out", ctx)
        attn_out = self._maybe_dropout(attn_out, train, rng)
        x = nc.layer_norm(
            nc.add(x, attn_out), self._p(f"{p}.norm1.gain"), self._p(f"{p}.norm1.bias")
        )
        grown = nc.gelu(
            nc.add(
                nc.matmul(x, self._p(f"{p}.ffn.grow.weight")),
                self._p(f"{p}.ffn.grow.bias"),
            )
        )
        ffn_out = nc.add(
            nc.matmul(grown, self._p(f"{p}.ffn.shrink.weight")),
            self._p(f"{p}.ffn.shrink.bias"),
        )
        ffn_out = self._maybe_dropout(ffn_out, train, rng)
        return nc.layer_norm(
            nc.add(x, ffn_out), self._p(f"{p}.norm2.gain"), self._p(f"{p}.norm2.bias")
        )

    def encode(self, batch: Batch, train: bool = False, rng=None) -> nc.Tensor:
        """Pooled vectors: final hidden state at the [CLS] position, (B, H)."""
        hidden = self.forward_hidden(batch, train=train, rng=rng)
        cls = nc.slice_axis(hidden, 1, 0, 1)
        return nc.reshape(cls, (batch.size, self.config.hidden))

    def score(self, batch: Batch, train: bool = False, rng=None) -> nc.Tensor:
        """Regression scores Wv + b, shape (B,); unbounded reals."""
        v = self.encode(batch, train=train, rng=rng)
        out = nc.add(nc.matmul(v, self._p("head.weight")), self._p("head.bias"))
        return nc.reshape(out, (batch.size,))

    def score_np(self, batch: Batch) -> np.ndarray:
        with nc.no_grad():
            out = self.score(batch).data
        if not np.isfinite(out.sum()):
            raise nc.NumericError("scoring produced non-finite values")
        return out.copy()

    # -- masked-LM head --------------------------------------------------------

    def _mlm_rows(self, hidden: nc.Tensor, rows: np.ndarray, cols: np.ndarray) -> nc.Tensor:
        b, t, h = hidden.shape
        flat = nc.reshape(hidden, (b * t, h))
        picked = nc.take_rows(flat, rows * t + cols)
        dense = nc.add(
            nc.matmul(picked, self._p("mlm.dense.weight")), self._p("mlm.dense.bias")
        )
        dense = nc.layer_norm(
            nc.gelu(dense), self._p("mlm.norm.gain"), self._p("mlm.norm.bias")
        )
        return nc.add(
            nc.matmul(dense, self._p("mlm.out.weight")), self._p("mlm.out.bias")
        )

    def mlm_loss(
        self,
        batch: Batch,
        positions: tuple[np.ndarray, np.ndarray],
        original_ids: np.ndarray,
        train: bool = False,
        rng=None,
    ) -> nc.Tensor:
        """Mean cross-entropy at masked positions through the wide head.

        ``positions`` is (rows, cols) into the batch; ``original_ids`` holds
        the pre-masking token at each position.
        """
        if not self.has_mlm_head:
            raise PhaseError("mlm_loss requires the masked-LM head")
        rows, cols = (np.asarray(positions[0]), np.asarray(positions[1]))
        if rows.size == 0:
            warnings.warn("mlm_loss over zero masked positions; defining loss = 0")
            return nc.Tensor(np.zeros((), dtype=np.float32))
        if cols.max() >= batch.width:
            raise ValueError("mask position outside the sequence")
        hidden = self.forward_hidden(batch, train=train, rng=rng)
        logits = self._mlm_rows(hidden, rows, cols)
        return nc.cross_entropy(logits, np.asarray(original_ids))

    def mlm_logits_at(
        self, batch: Batch, positions: tuple[np.ndarray, np.ndarray]
    ) -> np.ndarray:
        """Inference-only logits at (rows, cols); shape (n_positions, V)."""
        if not self.has_mlm_head:
            raise PhaseError("mlm_logits_at requires the masked-LM head")
        rows, cols = (np.asarray(positions[0]), np.asarray(positions[1]))
        with nc.no_grad():
            hidden = self.forward_hidden(batch)
            logits = self._mlm_rows(hidden, rows, cols).data
        if not np.isfinite(logits.sum()):
            raise nc.NumericError("masked-LM logits are non-finite")
        return logits


class PhaseError(RuntimeError):
    """Operation requires a head the model does not carry."""


def scores_equal(a: MetricModel, b: MetricModel) -> bool:
    """Bitwise parameter equality (same layout required)."""
    sa, sb = a.state_arrays(), b.state_arrays()
    return sa.keys() == sb.keys() and all(
        np.array_equal(sa[k], sb[k]) for k in sa
    )
