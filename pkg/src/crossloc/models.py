"""Model networks: per-modality encoders, latent translators, shared classifier.

Encoders map a window batch (B, c, n_w) onto a spatio-temporal latent
representation (B, S, T, d) with one spatial token per channel and one
temporal slot per patch. Two encoder families exist: alternating
spatial/temporal attention blocks, and a strided per-channel conv stack.
Translators map one modality's representation into the other's space via
learned query tokens + cross-attention. A single classifier consumes
target-shaped representations from either path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .seeding import stream


class ContractError(ValueError):
    """A representation reached a network it is not allowed to feed."""


@dataclass
class EncoderCfg:
    kind: str = "st_transformer"  # or "conv"
    d: int = 64
    patch_len: int = 10
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in ("st_transformer", "conv"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.d % self.heads:
            raise ValueError("embed dim must be divisible by head count")


@dataclass
class LatentRep:
    """Spatio-temporal representation: tokens (B, S, T, d) plus modality tag."""
    tokens: Tensor
    modality_tag: str

    @property
    def shape(self):
        return self.tokens.shape


def time_pool(rep: LatentRep, pool_spatial: bool = False) -> Tensor:
    """Mean over the time axis, then flatten spatial x embed.

    This is the space cosine similarities are computed in. With
    pool_spatial=True the spatial axis is averaged out as well.
    """
    pooled = rep.tokens.mean(axis=2)  # (B, S, d)
    b, s, d = pooled.shape
    if pool_spatial:
        return pooled.mean(axis=1)
    return pooled.reshape(b, s * d)


# -- parameter containers -------------------------------------------------------


class Module:
    """Minimal container: children and parameters found by attribute walk."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}" if prefix else key
            if isinstance(val, Tensor):
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, sub in enumerate(val):
                    out.update(sub.named_parameters(f"{name}.{i}."))
        return out


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    vals = rng.normal(0.0, std, size=shape)
    return np.clip(vals, -2 * std, 2 * std).astype(dtype)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, dtype):
        self.w = Tensor(_trunc_normal(rng, (d_in, d_out), 0.02, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm(Module):
    def __init__(self, d: int, dtype):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class Dropout(Module):
    """Inverted dropout drawing masks from a shared named stream."""

    def __init__(self, p: float, ctx: "RunState"):
        self.p = p
        self.ctx = ctx

    def __call__(self, x: Tensor) -> Tensor:
        if not self.ctx.training or self.p <= 0.0:
            return x
        keep = 1.0 - self.p
        mask = (self.ctx.dropout_rng.random(x.shape) < keep) / keep
        return x * Tensor(mask.astype(x.dtype))


class RunState:
    """Shared mutable run context: train/eval flag and the dropout stream."""

    def __init__(self, seed: int):
        self.training = False
        self.dropout_rng = stream(seed, "dropout")


class MultiHeadAttention(Module):
    def __init__(self, rng, d: int, heads: int, dtype):
        self.heads = heads
        self.d_head = d // heads
        self.wq = Linear(rng, d, d, dtype)
        self.wk = Linear(rng, d, d, dtype)
        self.wv = Linear(rng, d, d, dtype)
        self.wo = Linear(rng, d, d, dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, l, d = x.shape
        return x.reshape(b, l, self.heads, self.d_head).transpose((0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(kv_in))
        v = self._split(self.wv(kv_in))
        scores = (q @ k.swap_last()) * (1.0 / np.sqrt(self.d_head))
        attn = T.softmax(scores, -1)
        ctx = attn @ v  # (b, h, lq, dh)
        b, h, lq, dh = ctx.shape
        out = ctx.transpose((0, 2, 1, 3)).reshape(b, lq, h * dh)
        return self.wo(out)


class Mlp(Module):
    def __init__(self, rng, d: int, ratio: int, dtype):
        self.fc1 = Linear(rng, d, d * ratio, dtype)
        self.fc2 = Linear(rng, d * ratio, d, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class Block(Module):
    """Pre-norm transformer block: x + attn(ln(x)), x + mlp(ln(x))."""

    def __init__(self, rng, d: int, heads: int, ratio: int, drop: Dropout, dtype):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(rng, d, heads, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.mlp = Mlp(rng, d, ratio, dtype)
        self.drop = drop

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h))
        x = x + self.drop(self.mlp(self.ln2(x)))
        return x


def _fold_spatial(x: Tensor) -> Tensor:
    # (B, S, T, d) -> (B*T, S, d): attend across channels at each time step
    b, s, t, d = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(b * t, s, d)


def _unfold_spatial(x: Tensor, b: int, s: int, t: int, d: int) -> Tensor:
    return x.reshape(b, t, s, d).transpose((0, 2, 1, 3))


def _fold_temporal(x: Tensor) -> Tensor:
    # (B, S, T, d) -> (B*S, T, d): attend across patches per channel
    b, s, t, d = x.shape
    return x.reshape(b * s, t, d)


def _unfold_temporal(x: Tensor, b: int, s: int, t: int, d: int) -> Tensor:
    return x.reshape(b, s, t, d)


class AlternatingBlocks(Module):
    """Stack of blocks applied alternately across the spatial and time axes."""

    def __init__(self, rng, cfg: EncoderCfg, drop: Dropout, dtype):
        self.blocks = [Block(rng, cfg.d, cfg.heads, cfg.mlp_ratio, drop, dtype)
                       for _ in range(cfg.layers)]

    def __call__(self, x: Tensor) -> Tensor:
        b, s, t, d = x.shape
        for i, blk in enumerate(self.blocks):
            if i % 2 == 0:
                x = _unfold_spatial(blk(_fold_spatial(x)), b, s, t, d)
            else:
                x = _unfold_temporal(blk(_fold_temporal(x)), b, s, t, d)
        return x


class STEncoder(Module):
    """Per-channel temporal patching + spatial/temporal attention blocks."""

    def __init__(self, rng, cfg: EncoderCfg, channels: int, n_w: int,
                 tag: str, drop: Dropout, dtype):
        if n_w % cfg.patch_len:
            raise ValueError(f"patch_len {cfg.patch_len} must divide window {n_w}")
        self.cfg = cfg
        self.channels = channels
        self.n_patches = n_w // cfg.patch_len
        self.tag = tag
        self.calls = 0
        self.patch_proj = Linear(rng, cfg.patch_len, cfg.d, dtype)
        self.spatial_emb = Tensor(
            _trunc_normal(rng, (channels, 1, cfg.d), 0.02, dtype), requires_grad=True)
        self.temporal_emb = Tensor(
            _trunc_normal(rng, (self.n_patches, cfg.d), 0.02, dtype), requires_grad=True)
        self.stack = AlternatingBlocks(rng, cfg, drop, dtype)

    def __call__(self, x: Tensor) -> LatentRep:
        self.calls += 1
        b, c, n_w = x.shape
        if c != self.channels:
            raise T.ShapeError(f"encoder '{self.tag}' expects {self.channels} channels, got {c}")
        t = self.n_patches
        patches = x.reshape(b, c, t, self.cfg.patch_len)
        tok = self.patch_proj(patches)
        tok = tok + self.spatial_emb + self.temporal_emb
        tok = self.stack(tok)
        return LatentRep(tok, self.tag)


def _stride_factors(patch_len: int) -> list[int]:
    factors, n, p = [], patch_len, 2
    while n > 1:
        while n % p == 0:
            factors.append(p)
            n //= p
        p += 1
    return factors or [1]


class ConvEncoder(Module):
    """Per-channel strided conv stack producing the same (B, S, T, d) shape."""

    def __init__(self, rng, cfg: EncoderCfg, channels: int, n_w: int,
                 tag: str, drop: Dropout, dtype):
        if n_w % cfg.patch_len:
            raise ValueError(f"patch_len {cfg.patch_len} must divide window {n_w}")
        self.cfg = cfg
        self.channels = channels
        self.n_patches = n_w // cfg.patch_len
        self.tag = tag
        self.calls = 0
        self.strides = _stride_factors(cfg.patch_len)
        self.convs = []
        c_in = 1
        for s in self.strides:
            k = 2 * s + 1
            w = _trunc_normal(rng, (cfg.d, c_in, k), 0.02, dtype)
            conv = Module()
            conv.w = Tensor(w, requires_grad=True)
            conv.b = Tensor(np.zeros(cfg.d, dtype=dtype), requires_grad=True)
            self.convs.append(conv)
            c_in = cfg.d
        self.spatial_emb = Tensor(
            _trunc_normal(rng, (channels, 1, cfg.d), 0.02, dtype), requires_grad=True)
        self.temporal_emb = Tensor(
            _trunc_normal(rng, (self.n_patches, cfg.d), 0.02, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> LatentRep:
        self.calls += 1
        b, c, n_w = x.shape
        if c != self.channels:
            raise T.ShapeError(f"encoder '{self.tag}' expects {self.channels} channels, got {c}")
        h = x.reshape(b * c, 1, n_w)
        for i, (conv, s) in enumerate(zip(self.convs, self.strides)):
            h = T.conv1d(h, conv.w, conv.b, stride=s, pad=s)
            if i < len(self.convs) - 1:
                h = T.gelu(h)
        t = self.n_patches
        tok = h.reshape(b, c, self.cfg.d, t).transpose((0, 1, 3, 2))
        tok = tok + self.spatial_emb + self.temporal_emb
        return LatentRep(tok, self.tag)


class Translator(Module):
    """Learned target-channel queries cross-attend over the source tokens."""

    def __init__(self, rng, cfg: EncoderCfg, s_target: int, n_patches: int,
                 src_tag: str, dst_tag: str, drop: Dropout, dtype):
        self.cfg = cfg
        self.s_target = s_target
        self.n_patches = n_patches
        self.src_tag = src_tag
        self.dst_tag = dst_tag
        self.calls = 0
        d = cfg.d
        self.query_emb = Tensor(
            _trunc_normal(rng, (s_target, 1, d), 0.02, dtype), requires_grad=True)
        self.query_temporal = Tensor(
            _trunc_normal(rng, (n_patches, d), 0.02, dtype), requires_grad=True)
        self.ln_q = LayerNorm(d, dtype)
        self.ln_kv = LayerNorm(d, dtype)
        self.cross = MultiHeadAttention(rng, d, cfg.heads, dtype)
        self.ln_mlp = LayerNorm(d, dtype)
        self.mlp = Mlp(rng, d, cfg.mlp_ratio, dtype)
        self.stack = AlternatingBlocks(rng, cfg, drop, dtype)
        self.drop = drop

    def __call__(self, rep: LatentRep) -> LatentRep:
        if rep.modality_tag != self.src_tag:
            raise ContractError(
                f"translator {self.src_tag}->{self.dst_tag} received a "
                f"'{rep.modality_tag}'-tagged representation")
        self.calls += 1
        b, s, t, d = rep.tokens.shape
        if t != self.n_patches:
            raise T.ShapeError(f"translator built for {self.n_patches} patches, got {t}")
        kv = rep.tokens.reshape(b, s * t, d)
        q = (self.query_emb + self.query_temporal).reshape(1, self.s_target * t, d)
        x = q + self.drop(self.cross(self.ln_q(q), self.ln_kv(kv)))
        x = x + self.drop(self.mlp(self.ln_mlp(x)))
        x = x.reshape(b, self.s_target, t, d)
        x = self.stack(x)
        return LatentRep(x, self.dst_tag)


class Classifier(Module):
    """Mean-pool over space and time, then a 2-layer MLP to class logits."""

    def __init__(self, rng, d: int, n_classes: int, tag: str, dtype):
        self.tag = tag
        self.calls = 0
        self.fc1 = Linear(rng, d, 2 * d, dtype)
        self.fc2 = Linear(rng, 2 * d, n_classes, dtype)

    def __call__(self, rep: LatentRep) -> Tensor:
        if rep.modality_tag != self.tag:
            raise ContractError(
                f"classifier consumes '{self.tag}'-shaped representations, "
                f"got '{rep.modality_tag}' (single-classifier constraint)")
        self.calls += 1
        pooled = rep.tokens.mean(axis=(1, 2))
        return self.fc2(T.gelu(self.fc1(pooled)))


@dataclass
class ModelBundle:
    """The five trainable networks plus their shared run context."""

    src_encoder: Module
    dst_encoder: Module
    to_dst: Translator
    to_src: Translator
    classifier: Classifier
    state: RunState
    src_tag: str
    dst_tag: str
    dtype: type = np.float32
    _params: dict[str, Tensor] = field(default_factory=dict)

    NET_NAMES = ("src_encoder", "dst_encoder", "to_dst", "to_src", "classifier")

    def __post_init__(self):
        params: dict[str, Tensor] = {}
        for net in self.NET_NAMES:
            params.update(getattr(self, net).named_parameters(net + "."))
        if len(set(map(id, params.values()))) != len(params):
            raise ValueError("duplicate parameter registration")
        self._params = params

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def net_parameters(self, nets) -> dict[str, Tensor]:
        prefixes = tuple(n + "." for n in nets)
        return {k: v for k, v in self._params.items() if k.startswith(prefixes)}

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def set_training(self, flag: bool) -> None:
        self.state.training = flag

    def counters(self) -> dict[str, int]:
        return {net: getattr(self, net).calls for net in self.NET_NAMES}

    def encode_src(self, x: Tensor) -> LatentRep:
        return self.src_encoder(x)

    def encode_dst(self, x: Tensor) -> LatentRep:
        return self.dst_encoder(x)

    def translate(self, direction: str, rep: LatentRep) -> LatentRep:
        if direction == "s2d":
            return self.to_dst(rep)
        if direction == "d2s":
            return self.to_src(rep)
        raise ValueError(f"unknown direction {direction!r}")


def _make_encoder(rng, cfg, channels, n_w, tag, drop, dtype):
    cls = STEncoder if cfg.kind == "st_transformer" else ConvEncoder
    return cls(rng, cfg, channels, n_w, tag, drop, dtype)


def build_bundle(src_channels: int, dst_channels: int, n_w: int, n_classes: int,
                 cfg: EncoderCfg, seed: int, dtype=np.float32,
                 src_tag: str = "src", dst_tag: str = "dst") -> ModelBundle:
    """Construct the five networks with seeded, order-stable initialization."""
    state = RunState(seed)
    drop = Dropout(cfg.dropout, state)
    rng = stream(seed, "init")
    t = n_w // cfg.patch_len
    src_enc = _make_encoder(rng, cfg, src_channels, n_w, src_tag, drop, dtype)
    dst_enc = _make_encoder(rng, cfg, dst_channels, n_w, dst_tag, drop, dtype)
    to_dst = Translator(rng, cfg, dst_channels, t, src_tag, dst_tag, drop, dtype)
    to_src = Translator(rng, cfg, src_channels, t, dst_tag, src_tag, drop, dtype)
    clf = Classifier(rng, cfg.d, n_classes, dst_tag, dtype)
    return ModelBundle(src_enc, dst_enc, to_dst, to_src, clf, state,
                       src_tag, dst_tag, dtype)


# -- checkpoint format -----------------------------------------------------------
#
# One JSON manifest line (utf-8, '\n'-terminated) followed by the raw buffers:
# each entry is float32 little-endian, concatenated in manifest order.

CKPT_MAGIC = "crossloc-ckpt-v1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    bufs = []
    for name, arr in arrays.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(buf)})
        offset += len(buf)
        bufs.append(buf)
    header = json.dumps({"format": CKPT_MAGIC, "entries": entries,
                         "meta": meta or {}}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for buf in bufs:
            fh.write(buf)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CKPT_MAGIC:
            raise ValueError(f"{path}: not a {CKPT_MAGIC} file")
        blob = fh.read()
    arrays = {}
    for ent in header["entries"]:
        raw = blob[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arrays[ent["name"]] = np.frombuffer(raw, dtype="<f4").reshape(ent["shape"]).copy()
    return arrays, header["meta"]


def save_bundle(path, bundle: ModelBundle, meta: dict | None = None,
                extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    arrays = {name: p.data for name, p in bundle.parameters().items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    save_arrays(path, arrays, meta)


def load_bundle(path, bundle: ModelBundle) -> tuple[dict[str, np.ndarray], dict]:
    """Restore parameters in place; returns (non-parameter arrays, meta)."""
    arrays, meta = load_arrays(path)
    extra = {}
    params = bundle.parameters()
    for name, arr in arrays.items():
        if name in params:
            p = params[name]
            if tuple(arr.shape) != p.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            p.data = arr.astype(bundle.dtype)
        else:
            extra[name] = arr
    return extra, meta
