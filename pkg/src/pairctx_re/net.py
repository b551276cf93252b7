"""Pair-context classification network.

A stack of post-layer-norm transformer encoder blocks over token + position +
segment embeddings; the final hidden state at position 0 (the [CLS] slot)
feeds a single linear layer producing one logit per relation class. Forward
and analytic backward passes are written directly in float64 numpy so
gradients are exact and checkable against finite differences.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .corpus import Label, NUM_CLASSES
from .encoder_input import EncodedExample, PaddedBatch, pad_batch

_LN_EPS = 1e-5
_MASK_BIAS = -1e9
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class GradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Encoder shape. The reference model is 12 layers x 12 heads x hidden 768;
    desk-scale configs shrink every axis."""

    num_layers: int
    num_heads: int
    hidden_dim: int
    ffn_dim: int
    vocab_size: int
    max_positions: int = 350
    num_classes: int = NUM_CLASSES
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "hidden_dim", "ffn_dim", "vocab_size",
                     "max_positions", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


def _layer_param_names(i: int) -> list[str]:
    p = f"layer{i}."
    return [
        p + "attn_wq", p + "attn_bq", p + "attn_wk", p + "attn_bk",
        p + "attn_wv", p + "attn_bv", p + "attn_wo", p + "attn_bo",
        p + "attn_ln_g", p + "attn_ln_b",
        p + "ffn_w1", p + "ffn_b1", p + "ffn_w2", p + "ffn_b2",
        p + "ffn_ln_g", p + "ffn_ln_b",
    ]


@dataclass
class ModelParams:
    """Named parameter tensors plus the config that fixes their shapes."""

    cfg: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f = cfg.hidden_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, h),
        "pos_emb": (cfg.max_positions, h),
        "seg_emb": (2, h),
        "emb_ln_g": (h,),
        "emb_ln_b": (h,),
    }
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        shapes.update({
            p + "attn_wq": (h, h), p + "attn_bq": (h,),
            p + "attn_wk": (h, h), p + "attn_bk": (h,),
            p + "attn_wv": (h, h), p + "attn_bv": (h,),
            p + "attn_wo": (h, h), p + "attn_bo": (h,),
            p + "attn_ln_g": (h,), p + "attn_ln_b": (h,),
            p + "ffn_w1": (h, f), p + "ffn_b1": (f,),
            p + "ffn_w2": (f, h), p + "ffn_b2": (h,),
            p + "ffn_ln_g": (h,), p + "ffn_ln_b": (h,),
        })
    shapes["cls_w"] = (h, cfg.num_classes)
    shapes["cls_b"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization: N(0, 0.02) weights, zero biases, unit
    layer-norm gains. The draw order is the fixed parameter order, so a given
    (config, seed) always yields bit-identical tensors."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith("_ln_g"):
            tensors[name] = np.ones(shape, dtype=np.float64)
        elif len(shape) == 1:  # biases and layer-norm shifts
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# Primitive ops

def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv_std
    return g * xhat + b, (xhat, inv_std, g)


def _layer_norm_backward(dy, cache):
    xhat, inv_std, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = (
        dxhat - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) * inv_std
    return dx, dg, db


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(a, da):
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


def _linear_backward(x, w, dout):
    in_dim, out_dim = w.shape
    dw = x.reshape(-1, in_dim).T @ dout.reshape(-1, out_dim)
    db = dout.reshape(-1, out_dim).sum(axis=0)
    dx = dout @ w.T
    return dx, dw, db


def _split_heads(x, num_heads):
    b, l, h = x.shape
    return x.reshape(b, l, num_heads, h // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, nh, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, nh * dh)


# ---------------------------------------------------------------------------
# Forward / backward

def _as_batch(batch, pad_id: int) -> PaddedBatch:
    if isinstance(batch, PaddedBatch):
        return batch
    return pad_batch(list(batch), pad_id=pad_id)


def _check_inputs(params: ModelParams, batch: PaddedBatch) -> None:
    cfg = params.cfg
    ids = batch.token_ids
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError(
            f"token id out of range for vocab size {cfg.vocab_size}: "
            f"[{ids.min()}, {ids.max()}]"
        )
    if ids.shape[1] > cfg.max_positions:
        raise ValueError(
            f"sequence length {ids.shape[1]} exceeds max_positions {cfg.max_positions}"
        )


def _dropout_mask(shape, p, rng):
    # Inverted dropout: the mask already carries the 1/(1-p) scale.
    return (rng.random(shape) >= p) / (1.0 - p)


def _forward_arrays(params: ModelParams, batch: PaddedBatch, cache: dict | None = None,
                    dropout_rng: np.random.Generator | None = None):
    cfg = params.cfg
    t = params.tensors
    ids, segs, mask = batch.token_ids, batch.segment_ids, batch.mask
    b, l = ids.shape
    p_drop = cfg.dropout if dropout_rng is not None else 0.0

    x0 = t["tok_emb"][ids] + t["pos_emb"][:l][None, :, :] + t["seg_emb"][segs]
    x, emb_ln_cache = _layer_norm(x0, t["emb_ln_g"], t["emb_ln_b"])
    if p_drop > 0:
        m = _dropout_mask(x.shape, p_drop, dropout_rng)
        x = x * m
        if cache is not None:
            cache["emb_drop"] = m
    # Additive key mask: PAD positions get a large negative score bias.
    score_bias = (1.0 - mask)[:, None, None, :] * _MASK_BIAS
    scale = 1.0 / np.sqrt(cfg.head_dim)

    layer_caches = []
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        x_in = x
        q = _split_heads(x_in @ t[p + "attn_wq"] + t[p + "attn_bq"], cfg.num_heads)
        k = _split_heads(x_in @ t[p + "attn_wk"] + t[p + "attn_bk"], cfg.num_heads)
        v = _split_heads(x_in @ t[p + "attn_wv"] + t[p + "attn_bv"], cfg.num_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + score_bias
        attn = softmax(scores, axis=-1)
        ctx = _merge_heads(attn @ v)
        attn_out = ctx @ t[p + "attn_wo"] + t[p + "attn_bo"]
        drop1 = None
        if p_drop > 0:
            drop1 = _dropout_mask(attn_out.shape, p_drop, dropout_rng)
            attn_out = attn_out * drop1
        x_mid, ln1_cache = _layer_norm(x_in + attn_out, t[p + "attn_ln_g"], t[p + "attn_ln_b"])

        h_pre = x_mid @ t[p + "ffn_w1"] + t[p + "ffn_b1"]
        h_act = _gelu(h_pre)
        ffn_out = h_act @ t[p + "ffn_w2"] + t[p + "ffn_b2"]
        drop2 = None
        if p_drop > 0:
            drop2 = _dropout_mask(ffn_out.shape, p_drop, dropout_rng)
            ffn_out = ffn_out * drop2
        x, ln2_cache = _layer_norm(x_mid + ffn_out, t[p + "ffn_ln_g"], t[p + "ffn_ln_b"])

        if cache is not None:
            layer_caches.append({
                "x_in": x_in, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
                "ln1": ln1_cache, "x_mid": x_mid, "h_pre": h_pre, "h_act": h_act,
                "ln2": ln2_cache, "drop1": drop1, "drop2": drop2,
            })

    h_cls = x[:, 0, :]
    logits = h_cls @ t["cls_w"] + t["cls_b"]
    if cache is not None:
        cache.update({
            "ids": ids, "segs": segs, "seq_len": l,
            "emb_ln": emb_ln_cache, "layers": layer_caches,
            "h_cls": h_cls, "logits": logits, "scale": scale,
        })
    return logits


def forward(params: ModelParams, batch, pad_id: int = 0) -> np.ndarray:
    """Inference-mode logits, shape (batch, num_classes). Deterministic; PAD
    positions cannot influence any real position."""
    padded = _as_batch(batch, pad_id)
    _check_inputs(params, padded)
    return _forward_arrays(params, padded)


def nll_loss(logits: np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Mean negative log likelihood of the gold labels, in nats."""
    labels = np.asarray([int(x) for x in labels], dtype=np.int64)
    if labels.size != logits.shape[0]:
        raise ValueError("one gold label per logit row required")
    m = logits.max(axis=-1, keepdims=True)
    log_z = m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    log_probs = logits - log_z
    return float(-log_probs[np.arange(labels.size), labels].mean())


def loss_and_grad(params: ModelParams, batch, pad_id: int = 0,
                  dropout_rng: np.random.Generator | None = None):
    """NLL loss and exact gradients for every parameter tensor.

    The batch must carry labels. Raises :class:`GradientError` naming the
    parameter when a non-finite gradient appears.
    """
    padded = _as_batch(batch, pad_id)
    _check_inputs(params, padded)
    if padded.labels is None:
        raise ValueError("loss requires a fully labeled batch")
    cache: dict = {}
    logits = _forward_arrays(params, padded, cache=cache, dropout_rng=dropout_rng)
    labels = padded.labels
    b = labels.size

    probs = softmax(logits)
    loss = nll_loss(logits, labels)
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b

    grads = _backward(params, padded, cache, dlogits)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in parameter {name!r}")
    return loss, grads


def grad(params: ModelParams, batch, pad_id: int = 0) -> dict[str, np.ndarray]:
    """Gradient structure congruent to ``params.tensors``."""
    return loss_and_grad(params, batch, pad_id=pad_id)[1]


def _backward(params: ModelParams, batch: PaddedBatch, cache: dict, dlogits: np.ndarray):
    cfg = params.cfg
    t = params.tensors
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    b, l = batch.token_ids.shape
    scale = cache["scale"]

    dh_cls, grads["cls_w"], grads["cls_b"] = _linear_backward(
        cache["h_cls"], t["cls_w"], dlogits
    )
    dx = np.zeros((b, l, cfg.hidden_dim), dtype=np.float64)
    dx[:, 0, :] = dh_cls

    for i in reversed(range(cfg.num_layers)):
        p = f"layer{i}."
        lc = cache["layers"][i]

        dres2, dg2, db2 = _layer_norm_backward(dx, lc["ln2"])
        grads[p + "ffn_ln_g"] += dg2
        grads[p + "ffn_ln_b"] += db2
        dffn_out = dres2 if lc["drop2"] is None else dres2 * lc["drop2"]
        dh_act, dw2, db_2 = _linear_backward(lc["h_act"], t[p + "ffn_w2"], dffn_out)
        grads[p + "ffn_w2"] += dw2
        grads[p + "ffn_b2"] += db_2
        dh_pre = dh_act * _gelu_grad(lc["h_pre"])
        dx_mid, dw1, db_1 = _linear_backward(lc["x_mid"], t[p + "ffn_w1"], dh_pre)
        grads[p + "ffn_w1"] += dw1
        grads[p + "ffn_b1"] += db_1
        dx_mid += dres2  # residual around the feed-forward block

        dres1, dg1, db1 = _layer_norm_backward(dx_mid, lc["ln1"])
        grads[p + "attn_ln_g"] += dg1
        grads[p + "attn_ln_b"] += db1
        dattn_out = dres1 if lc["drop1"] is None else dres1 * lc["drop1"]
        dctx, dwo, dbo = _linear_backward(lc["ctx"], t[p + "attn_wo"], dattn_out)
        grads[p + "attn_wo"] += dwo
        grads[p + "attn_bo"] += dbo

        dctx_h = _split_heads(dctx, cfg.num_heads)
        dattn = dctx_h @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["attn"].transpose(0, 1, 3, 2) @ dctx_h
        dscores = _softmax_backward(lc["attn"], dattn)
        dq = dscores @ lc["k"] * scale
        dk = dscores.transpose(0, 1, 3, 2) @ lc["q"] * scale

        dx_in = dres1  # residual around attention
        for name, dmat in (("attn_wq", dq), ("attn_wk", dk), ("attn_wv", dv)):
            dlin = _merge_heads(dmat)
            dxp, dw, db_ = _linear_backward(lc["x_in"], t[p + name], dlin)
            grads[p + name] += dw
            grads[p + name.replace("w", "b", 1)] += db_
            dx_in = dx_in + dxp
        dx = dx_in

    if cache.get("emb_drop") is not None:
        dx = dx * cache["emb_drop"]
    dx0, dg_e, db_e = _layer_norm_backward(dx, cache["emb_ln"])
    grads["emb_ln_g"] += dg_e
    grads["emb_ln_b"] += db_e
    np.add.at(grads["tok_emb"], cache["ids"].reshape(-1), dx0.reshape(-1, cfg.hidden_dim))
    grads["pos_emb"][: cache["seq_len"]] += dx0.sum(axis=0)
    np.add.at(grads["seg_emb"], cache["segs"].reshape(-1), dx0.reshape(-1, cfg.hidden_dim))
    return grads


def predict(params: ModelParams, batch, pad_id: int = 0) -> list[Label]:
    """Argmax class per example; ties resolve to the lowest class index."""
    logits = forward(params, batch, pad_id=pad_id)
    return [Label(int(i)) for i in np.argmax(logits, axis=-1)]


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
    """Plain stochastic gradient descent, in place."""
    for name, g in grads.items():
        params.tensors[name] -= lr * g


# ---------------------------------------------------------------------------
# Checkpoints: fixed little-endian layout so files diff deterministically.

_MAGIC = b"PXRE"
_VERSION = 1
_CFG_FIELDS = ("num_layers", "num_heads", "hidden_dim", "ffn_dim", "vocab_size",
               "max_positions", "num_classes")


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Header with config fields, then name / shape / float32 data per tensor,
    in sorted name order."""
    cfg = params.cfg
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<7I", *(getattr(cfg, f) for f in _CFG_FIELDS)))
        names = sorted(params.tensors)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = params.tensors[name]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint (ours or externally produced in the same layout)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    values = struct.unpack_from("<7I", raw, off)
    off += 28
    cfg = ModelConfig(**dict(zip(_CFG_FIELDS, (int(v) for v in values))))
    (n_tensors,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        off += 4 * count
        tensors[name] = data.astype(np.float64).reshape(shape)
    expected = _param_shapes(cfg)
    if set(tensors) != set(expected):
        raise ValueError(f"{path}: tensor names do not match the declared config")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ValueError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, expected {shape}"
            )
    return ModelParams(cfg, tensors)
