"""Long-input encoder-decoder transformer.

The encoder's self-attention is banded (each token sees a fixed window around
itself) plus a small set of global tokens that see and are seen by everything;
the decoder uses ordinary causal self-attention and cross-attention. All math
runs on the float64 tape in :mod:`parsum.tape`, so training gradients are
exact and activation memory is observable.

Layout of the parameter dictionary (flat name -> Tensor):

    tok_emb                 [vocab, d_model]      shared input embedding
    enc_pos / dec_pos       [max_len, d_model]    learned absolute positions
    enc.<i>.<leaf>, dec.<i>.<leaf>                per-layer weights
    enc_final_ln.g/.b, dec_final_ln.g/.b
    out_w [d_model, vocab], out_b [vocab]         untied output projection
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tape
from .tape import Tensor
from .tokenizer import PAD, Encoding

# Debug hook: called as attention_probe(tag, weights, row_mask) right after
# each attention softmax. weights has rows on axis -2; row_mask is a bool
# array over those rows marking the ones that must sum to 1.
attention_probe: Callable[[str, np.ndarray, np.ndarray], None] | None = None


class LayerNonFiniteError(RuntimeError):
    """A layer produced NaN/inf activations (or the loss went non-finite)."""

    def __init__(self, stage: str, layer: int):
        self.stage = stage
        self.layer = layer
        super().__init__(f"non-finite values after {stage} layer {layer}")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 8000
    d_model: int = 512
    n_heads: int = 8
    n_enc_layers: int = 6
    n_dec_layers: int = 6
    d_ff: int = 2048
    window_size: int = 64
    max_enc_len: int = 8192
    max_dec_len: int = 512
    dropout: float = 0.0

    def __post_init__(self):
        dims = (self.vocab_size, self.d_model, self.n_heads, self.n_enc_layers,
                self.n_dec_layers, self.d_ff, self.window_size,
                self.max_enc_len, self.max_dec_len)
        if any(d < 1 for d in dims):
            raise ValueError("all model dimensions must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.window_size % 2 != 0:
            raise ValueError(f"window_size must be even, got {self.window_size}")
        if self.window_size > self.max_enc_len:
            raise ValueError("window_size exceeds max_enc_len")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d_model": self.d_model,
            "n_heads": self.n_heads, "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers, "d_ff": self.d_ff,
            "window_size": self.window_size, "max_enc_len": self.max_enc_len,
            "max_dec_len": self.max_dec_len, "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class AttentionSpec:
    """What an attention call is allowed to look at.

    pad_mask marks usable key positions (1 = real token). global_mask marks
    tokens that attend everywhere and are attended from everywhere. causal
    restricts each query to keys at or before it; global tokens only make
    sense in the encoder, so causal and globals are mutually exclusive.
    """

    window: int
    pad_mask: np.ndarray
    global_mask: np.ndarray | None = None
    causal: bool = False

    def __post_init__(self):
        pad = np.asarray(self.pad_mask, dtype=np.int64)
        object.__setattr__(self, "pad_mask", pad)
        if self.global_mask is not None:
            gm = np.asarray(self.global_mask, dtype=np.int64)
            if gm.shape != pad.shape:
                raise ValueError("global_mask and pad_mask shapes differ")
            if np.any(gm & ~pad):
                raise ValueError("global tokens must be unmasked")
            if self.causal and gm.any():
                raise ValueError("causal attention cannot have global tokens")
            object.__setattr__(self, "global_mask", gm)
        if self.window % 2 != 0:
            raise ValueError("window must be even")

    @property
    def global_positions(self) -> np.ndarray:
        if self.global_mask is None:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.global_mask)


# --- parameter construction ---------------------------------------------

_INIT_STD = 0.02


def _layer_shapes(cfg: ModelConfig, prefix: str, cross: bool) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    blocks = ["self"] + (["cross"] if cross else [])
    shapes: dict[str, tuple[int, ...]] = {}
    for b in blocks:
        for m in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{b}.{m}"] = (d, d)
        for m in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}.{b}.{m}"] = (d,)
    n_ln = 3 if cross else 2
    for i in range(1, n_ln + 1):
        shapes[f"{prefix}.ln{i}.g"] = (d,)
        shapes[f"{prefix}.ln{i}.b"] = (d,)
    shapes[f"{prefix}.ffn.w1"] = (d, f)
    shapes[f"{prefix}.ffn.b1"] = (f,)
    shapes[f"{prefix}.ffn.w2"] = (f, d)
    shapes[f"{prefix}.ffn.b2"] = (d,)
    return shapes


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, cfg.d_model),
        "enc_pos": (cfg.max_enc_len, cfg.d_model),
        "dec_pos": (cfg.max_dec_len, cfg.d_model),
        "enc_final_ln.g": (cfg.d_model,),
        "enc_final_ln.b": (cfg.d_model,),
        "dec_final_ln.g": (cfg.d_model,),
        "dec_final_ln.b": (cfg.d_model,),
        "out_w": (cfg.d_model, cfg.vocab_size),
        "out_b": (cfg.vocab_size,),
    }
    for i in range(cfg.n_enc_layers):
        shapes.update(_layer_shapes(cfg, f"enc.{i}", cross=False))
    for i in range(cfg.n_dec_layers):
        shapes.update(_layer_shapes(cfg, f"dec.{i}", cross=True))
    return shapes


def init_parameters(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b") or leaf == "b" or name == "out_b":
            data = np.zeros(shape)
        elif leaf == "g":
            data = np.ones(shape)
        else:
            data = rng.normal(0.0, _INIT_STD, size=shape)
        params[name] = tape.parameter(data)
    return params


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def save_checkpoint(path, params: dict[str, Tensor], cfg: ModelConfig) -> None:
    """One .npz holding the config (as JSON) plus every named array."""
    arrays = {name.replace(".", "/"): p.data for name, p in params.items()}
    arrays["__config__"] = np.frombuffer(
        json.dumps(cfg.to_dict()).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, Tensor], ModelConfig]:
    with np.load(path) as z:
        if "__config__" not in z:
            raise ValueError(f"{path}: not a model checkpoint (missing config entry)")
        cfg = ModelConfig.from_dict(json.loads(bytes(z["__config__"]).decode("utf-8")))
        expected = parameter_shapes(cfg)
        params: dict[str, Tensor] = {}
        stored = {k.replace("/", "."): k for k in z.files if k != "__config__"}
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        if missing or extra:
            raise ValueError(
                f"{path}: parameter names do not match config "
                f"(missing {missing[:3]}, unexpected {extra[:3]})"
            )
        for name, key in stored.items():
            arr = np.asarray(z[key], dtype=tape.DTYPE)
            if arr.shape != expected[name]:
                raise ValueError(
                    f"{path}: {name} has shape {arr.shape}, config implies {expected[name]}"
                )
            params[name] = tape.parameter(arr)
    return params, cfg


def is_checkpoint_file(path) -> bool:
    try:
        with zipfile.ZipFile(path) as z:
            return "__config__.npy" in z.namelist()
    except (OSError, zipfile.BadZipFile):
        return False


# --- reference attention (plain numpy, no tape) --------------------------


def full_attention_reference(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    spec: AttentionSpec,
    allowed: np.ndarray | None = None,
) -> np.ndarray:
    """Dense softmax attention; the oracle the windowed path is tested against.

    Accepts [n, d] or [h, n, d]. spec.window is ignored. ``allowed`` is an
    optional extra [n, n] boolean restriction (True = may attend). Rows whose
    allowed set is empty come back as zeros.
    """
    q, k, v = (np.asarray(a, dtype=tape.DTYPE) for a in (q, k, v))
    if q.shape != k.shape or k.shape != v.shape:
        raise ValueError(f"attention shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    squeezed = q.ndim == 2
    if squeezed:
        q, k, v = q[None], k[None], v[None]
    n, d = q.shape[-2], q.shape[-1]
    ok = np.broadcast_to(spec.pad_mask.astype(bool)[None, :], (n, n)).copy()
    if spec.causal:
        ok &= np.tril(np.ones((n, n), dtype=bool))
    if allowed is not None:
        ok &= np.asarray(allowed, dtype=bool)
    scores = q @ k.swapaxes(-1, -2) / math.sqrt(d)
    scores = np.where(ok[None], scores, tape.NEG_INF)
    p = tape._softmax_data(scores)
    out = p @ v
    return out[0] if squeezed else out


# --- windowed attention (tape-traced) ------------------------------------


def _band_indices(n: int, w: int, pad_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor table for a width-w band.

    Returns (idx [n, w+1], valid [n, w+1]). Validity is decided on the raw
    offsets before clipping, so edge rows don't double-count the clipped
    duplicates, and masked keys are invalid everywhere.
    """
    half = w // 2
    offsets = np.arange(-half, half + 1)
    raw = np.arange(n)[:, None] + offsets[None, :]
    in_range = (raw >= 0) & (raw < n)
    idx = np.clip(raw, 0, n - 1)
    valid = in_range & (pad_mask.astype(bool)[idx])
    return idx, valid


def _bias(valid: np.ndarray) -> np.ndarray:
    return np.where(valid, 0.0, tape.NEG_INF)


def _window_attention(q: Tensor, k: Tensor, v: Tensor, spec: AttentionSpec, tag: str) -> Tensor:
    """Banded + global attention over [h, n, d] tensors.

    Each ordinary token softmaxes jointly over its band and the global set
    (band duplicates excluded from the global block); rows for the global
    tokens themselves are recomputed with dense attention and spliced in.
    """
    h, n, d = q.data.shape
    scal = 1.0 / math.sqrt(d)
    idx, band_valid = _band_indices(n, spec.window, spec.pad_mask)
    g_pos = spec.global_positions

    scores = tape.add(tape.window_scores(q, k, idx, scal), tape.constant(_bias(band_valid)))
    width = idx.shape[1]
    if len(g_pos):
        k_g = tape.index_select(k, g_pos)
        v_g = tape.index_select(v, g_pos)
        g_scores = tape.scale(tape.matmul(q, tape.transpose(k_g, (0, 2, 1))), scal)
        in_band = np.abs(g_pos[None, :] - np.arange(n)[:, None]) <= spec.window // 2
        g_scores = tape.add(g_scores, tape.constant(_bias(~in_band)))
        scores = tape.concat_last(scores, g_scores)

    p = tape.softmax_last(scores)
    if attention_probe is not None:
        row_ok = spec.pad_mask.astype(bool)
        if len(g_pos):
            row_ok = row_ok & ~spec.global_mask.astype(bool)
        attention_probe(tag, p.data, np.broadcast_to(row_ok, (h, n)))

    out = tape.window_apply(tape.slice_last(p, 0, width), v, idx)
    if len(g_pos):
        out = tape.add(out, tape.matmul(tape.slice_last(p, width, width + len(g_pos)), v_g))
        # Global tokens look at everything; overwrite their rows with dense rows.
        q_g = tape.index_select(q, g_pos)
        dense = tape.add(
            tape.scale(tape.matmul(q_g, tape.transpose(k, (0, 2, 1))), scal),
            tape.constant(_bias(spec.pad_mask.astype(bool))[None, :]),
        )
        p_g = tape.softmax_last(dense)
        if attention_probe is not None:
            attention_probe(tag + ".global", p_g.data,
                            np.ones((h, len(g_pos)), dtype=bool))
        out = tape.row_scatter(out, g_pos, tape.matmul(p_g, v))
    return out


def sliding_window_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, spec: AttentionSpec
) -> np.ndarray:
    """Array-in, array-out wrapper around the traced banded attention."""
    q, k, v = (np.asarray(a, dtype=tape.DTYPE) for a in (q, k, v))
    if q.shape != k.shape or k.shape != v.shape:
        raise ValueError(f"attention shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    squeezed = q.ndim == 2
    if squeezed:
        q, k, v = q[None], k[None], v[None]
    with tape.no_grad():
        out = _window_attention(
            tape.constant(q), tape.constant(k), tape.constant(v), spec, "adhoc"
        ).data
    return out[0] if squeezed else out


def _causal_attention(q: Tensor, k: Tensor, v: Tensor, tag: str) -> Tensor:
    h, m, d = q.data.shape
    scores = tape.scale(tape.matmul(q, tape.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    mask = np.where(np.tril(np.ones((m, m), dtype=bool)), 0.0, tape.NEG_INF)
    p = tape.softmax_last(tape.add(scores, tape.constant(mask)))
    if attention_probe is not None:
        attention_probe(tag, p.data, np.ones((h, m), dtype=bool))
    return tape.matmul(p, v)


def _cross_attention(q: Tensor, k: Tensor, v: Tensor, tag: str) -> Tensor:
    h, m, d = q.data.shape
    scores = tape.scale(tape.matmul(q, tape.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    p = tape.softmax_last(scores)
    if attention_probe is not None:
        attention_probe(tag, p.data, np.ones((h, m), dtype=bool))
    return tape.matmul(p, v)


# --- transformer blocks ---------------------------------------------------


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    n, d = x.data.shape
    return tape.transpose(tape.reshape(x, (n, n_heads, d // n_heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    h, n, dh = x.data.shape
    return tape.reshape(tape.transpose(x, (1, 0, 2)), (n, h * dh))


def _project(params, prefix: str, x: Tensor, n_heads: int) -> tuple[Tensor, Tensor, Tensor]:
    def one(m, b):
        return _split_heads(tape.add(tape.matmul(x, params[f"{prefix}.{m}"]),
                                     params[f"{prefix}.{b}"]), n_heads)

    return one("wq", "bq"), one("wk", "bk"), one("wv", "bv")


def _out_proj(params, prefix: str, x: Tensor) -> Tensor:
    return tape.add(tape.matmul(_merge_heads(x), params[f"{prefix}.wo"]),
                    params[f"{prefix}.bo"])


def _ffn(params, prefix: str, x: Tensor) -> Tensor:
    h = tape.gelu(tape.add(tape.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return tape.add(tape.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _ln(params, prefix: str, x: Tensor) -> Tensor:
    return tape.layernorm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _maybe_dropout(x: Tensor, rate: float, seed_parts: tuple | None) -> Tensor:
    if rate <= 0.0 or seed_parts is None:
        return x
    # Seed derived from (step seed, site id) so a checkpointed recompute
    # draws the identical mask.
    rng = np.random.default_rng(np.random.SeedSequence(seed_parts))
    return tape.dropout(x, rate, rng)


def _enc_layer(params, cfg: ModelConfig, i: int, x: Tensor, spec: AttentionSpec,
               drop_seed: tuple | None) -> Tensor:
    pre = f"enc.{i}"
    qh, kh, vh = _project(params, f"{pre}.self", _ln(params, f"{pre}.ln1", x), cfg.n_heads)
    att = _out_proj(params, f"{pre}.self", _window_attention(qh, kh, vh, spec, f"enc.{i}"))
    x = tape.add(x, _maybe_dropout(att, cfg.dropout, drop_seed and (*drop_seed, i, 0)))
    ff = _ffn(params, f"{pre}.ffn", _ln(params, f"{pre}.ln2", x))
    return tape.add(x, _maybe_dropout(ff, cfg.dropout, drop_seed and (*drop_seed, i, 1)))


def _dec_layer(params, cfg: ModelConfig, i: int, x: Tensor, enc_k: Tensor, enc_v: Tensor,
               drop_seed: tuple | None) -> Tensor:
    pre = f"dec.{i}"
    qh, kh, vh = _project(params, f"{pre}.self", _ln(params, f"{pre}.ln1", x), cfg.n_heads)
    att = _out_proj(params, f"{pre}.self", _causal_attention(qh, kh, vh, f"dec.{i}.self"))
    x = tape.add(x, _maybe_dropout(att, cfg.dropout, drop_seed and (*drop_seed, 100 + i, 0)))

    xq = _ln(params, f"{pre}.ln2", x)
    q = _split_heads(tape.add(tape.matmul(xq, params[f"{pre}.cross.wq"]),
                              params[f"{pre}.cross.bq"]), cfg.n_heads)
    att = _out_proj(params, f"{pre}.cross", _cross_attention(q, enc_k, enc_v, f"dec.{i}.cross"))
    x = tape.add(x, _maybe_dropout(att, cfg.dropout, drop_seed and (*drop_seed, 100 + i, 1)))

    ff = _ffn(params, f"{pre}.ffn", _ln(params, f"{pre}.ln3", x))
    return tape.add(x, _maybe_dropout(ff, cfg.dropout, drop_seed and (*drop_seed, 100 + i, 2)))


def _embed(params, table_name: str, ids: np.ndarray, pos_name: str) -> Tensor:
    tok = tape.gather_rows(params[table_name], ids)
    pos = tape.gather_rows(params[pos_name], np.arange(len(ids)))
    return tape.add(tok, pos)


def _check_finite(x: Tensor, stage: str, layer: int) -> None:
    if not np.all(np.isfinite(x.data)):
        raise LayerNonFiniteError(stage, layer)


def _encode(params, cfg: ModelConfig, ids: np.ndarray, spec: AttentionSpec,
            checkpointing: bool = False, drop_seed: tuple | None = None) -> Tensor:
    if len(ids) > cfg.max_enc_len:
        raise ValueError(f"input length {len(ids)} exceeds max_enc_len {cfg.max_enc_len}")
    x = _embed(params, "tok_emb", ids, "enc_pos")
    for i in range(cfg.n_enc_layers):
        if checkpointing:
            x = tape.checkpoint(
                lambda t, i=i: _enc_layer(params, cfg, i, t, spec, drop_seed), x
            )
        else:
            x = _enc_layer(params, cfg, i, x, spec, drop_seed)
        _check_finite(x, "encoder", i)
    return _ln(params, "enc_final_ln", x)


def _decode(params, cfg: ModelConfig, enc_out: Tensor, target_ids: np.ndarray,
            checkpointing: bool = False, drop_seed: tuple | None = None) -> Tensor:
    m = len(target_ids)
    if m > cfg.max_dec_len:
        raise ValueError(f"target length {m} exceeds max_dec_len {cfg.max_dec_len}")
    x = _embed(params, "tok_emb", target_ids, "dec_pos")
    for i in range(cfg.n_dec_layers):
        pre = f"dec.{i}.cross"
        enc_k = _split_heads(tape.add(tape.matmul(enc_out, params[f"{pre}.wk"]),
                                      params[f"{pre}.bk"]), cfg.n_heads)
        enc_v = _split_heads(tape.add(tape.matmul(enc_out, params[f"{pre}.wv"]),
                                      params[f"{pre}.bv"]), cfg.n_heads)
        if checkpointing:
            x = tape.checkpoint(
                lambda t, k, v, i=i: _dec_layer(params, cfg, i, t, k, v, drop_seed),
                x, enc_k, enc_v,
            )
        else:
            x = _dec_layer(params, cfg, i, x, enc_k, enc_v, drop_seed)
        _check_finite(x, "decoder", i)
    x = _ln(params, "dec_final_ln", x)
    return tape.add(tape.matmul(x, params["out_w"]), params["out_b"])


def _spec_for_encoding(cfg: ModelConfig, enc: Encoding, length: int) -> AttentionSpec:
    return AttentionSpec(
        window=cfg.window_size,
        pad_mask=np.asarray(enc.attention_mask[:length]),
        global_mask=np.asarray(enc.global_mask[:length]),
    )


def encode_document(params, cfg: ModelConfig, enc: Encoding) -> np.ndarray:
    """Encoder states for every position of the (possibly padded) encoding."""
    ids = np.asarray(enc.ids)
    with tape.no_grad():
        out = _encode(params, cfg, ids, _spec_for_encoding(cfg, enc, len(ids))).data
    return out


def decoder_forward(params, cfg: ModelConfig, enc_states: np.ndarray,
                    target_ids: np.ndarray) -> np.ndarray:
    """Next-token logits [m, vocab] given already-encoded (unpadded) states."""
    with tape.no_grad():
        return _decode(params, cfg, tape.constant(np.asarray(enc_states, dtype=tape.DTYPE)),
                       np.asarray(target_ids)).data


def _trim_target(target_ids: np.ndarray) -> np.ndarray:
    t = np.asarray(target_ids)
    real = np.flatnonzero(t != PAD)
    if len(real) == 0:
        raise ValueError("target sequence is all padding")
    return t[: real[-1] + 1]


def loss_and_gradients(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    batch: tuple[Encoding, np.ndarray],
    checkpointing: bool = False,
    drop_seed: tuple | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """One teacher-forced example: mean token cross-entropy and exact grads.

    Pad tails are stripped before the forward pass; the loss averages over
    the real target positions. With checkpointing on, each layer's interior
    is recomputed during backward instead of being kept alive.
    """
    enc, target_ids = batch
    n_real = len(enc.real_ids)
    target = _trim_target(target_ids)
    if len(target) < 2:
        raise ValueError("target must contain at least two tokens (input and label)")
    dec_in, labels = target[:-1], target[1:]

    zero_grads(params)
    spec = _spec_for_encoding(cfg, enc, n_real)
    enc_out = _encode(params, cfg, np.asarray(enc.ids[:n_real]), spec,
                      checkpointing, drop_seed)
    logits = _decode(params, cfg, enc_out, dec_in, checkpointing, drop_seed)
    loss = tape.cross_entropy(logits, labels, np.ones(len(labels)))
    if not np.isfinite(loss.data):
        raise LayerNonFiniteError("loss", -1)
    tape.backward(loss)

    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
             for name, p in params.items()}
    zero_grads(params)
    return float(loss.data), grads
