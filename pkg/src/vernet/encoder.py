"""Small trainable transformer producing a contextual matrix per source-hypothesis pair.

Input embedding is token + learned position + segment (0 for ``[CLS]`` through
the source ``[SEP]``, 1 for the hypothesis and final ``[SEP]``), followed by
``layers`` post-norm transformer blocks.  Nodes are encoded in padded batches;
padding is masked as attention keys and zeroed in the output.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor
from .textpipe import PAD_ID, PairLayout

CHECKPOINT_FORMAT = "vernet-ckpt"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 256
    max_positions: int = 128
    seed: int = 0
    init_std: float = 0.02
    ln_eps: float = 1e-12

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "heads", "ff_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")


@dataclass
class EncodedNode:
    H: Tensor
    layout: PairLayout
    mask: np.ndarray

    @property
    def length(self) -> int:
        return len(self.layout)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator | None = None) -> dict[str, Tensor]:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    d, f, s = cfg.d_model, cfg.ff_dim, cfg.init_std

    def normal(*shape):
        return rng.normal(0.0, s, size=shape)

    p = {
        "emb.token": normal(cfg.vocab_size, d),
        "emb.position": normal(cfg.max_positions, d),
        "emb.segment": normal(2, d),
    }
    for i in range(cfg.layers):
        pre = f"layer{i}."
        p[pre + "attn.qkv.w"] = normal(d, 3 * d)
        p[pre + "attn.qkv.b"] = np.zeros(3 * d)
        p[pre + "attn.out.w"] = normal(d, d)
        p[pre + "attn.out.b"] = np.zeros(d)
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "ff1.w"] = normal(d, f)
        p[pre + "ff1.b"] = np.zeros(f)
        p[pre + "ff2.w"] = normal(f, d)
        p[pre + "ff2.b"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
    return {k: dc.parameter(v, name=k) for k, v in p.items()}


def pad_layouts(layouts: Sequence[PairLayout]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded ids, segment ids and validity mask, each (N, T)."""
    if not layouts:
        raise ContractError("nothing to encode")
    T = max(len(l) for l in layouts)
    ids = np.full((len(layouts), T), PAD_ID, dtype=np.int64)
    seg = np.zeros((len(layouts), T), dtype=np.int64)
    mask = np.zeros((len(layouts), T), dtype=bool)
    for r, lay in enumerate(layouts):
        n = len(lay)
        ids[r, :n] = lay.ids
        seg[r, :n] = lay.segments
        mask[r, :n] = True
    return ids, seg, mask


def _attention(x: Tensor, params: Mapping[str, Tensor], pre: str, cfg: EncoderConfig, key_mask: np.ndarray,
               dropout: float, rng) -> Tensor:
    N, T, d = x.shape
    A, dh = cfg.heads, cfg.d_model // cfg.heads
    qkv = dc.affine(x, params[pre + "qkv.w"], params[pre + "qkv.b"])
    qkv = dc.transpose(dc.reshape(qkv, (N, T, 3, A, dh)), (2, 0, 3, 1, 4))  # (3, N, A, T, dh)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = dc.scale(dc.matmul(q, dc.transpose(k)), 1.0 / np.sqrt(dh))
    probs = dc.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    probs = dc.dropout(probs, dropout, rng)
    ctx = dc.reshape(dc.transpose(dc.matmul(probs, v), (0, 2, 1, 3)), (N, T, d))
    return dc.affine(ctx, params[pre + "out.w"], params[pre + "out.b"])


def embed(params: Mapping[str, Tensor], ids: np.ndarray, seg: np.ndarray) -> Tensor:
    T = ids.shape[1]
    tok = dc.take(params["emb.token"], ids)
    pos = dc.take(params["emb.position"], np.arange(T))
    sg = dc.take(params["emb.segment"], seg)
    return dc.add(dc.add(tok, pos), sg)


def encode_batch(layouts: Sequence[PairLayout], params: Mapping[str, Tensor], cfg: EncoderConfig,
                 dropout: float = 0.0, rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Encode N pairs together: returns H (N, T, d) with padded rows zero, and the mask."""
    ids, seg, mask = pad_layouts(layouts)
    if ids.shape[1] > cfg.max_positions:
        raise ContractError(f"sequence length {ids.shape[1]} exceeds max_positions {cfg.max_positions}")
    if ids.max() >= cfg.vocab_size:
        raise ContractError("token id outside the encoder vocabulary")
    x = embed(params, ids, seg)
    for i in range(cfg.layers):
        pre = f"layer{i}."
        a = _attention(x, params, pre + "attn.", cfg, mask, dropout, rng)
        x = dc.layer_norm(dc.add(x, dc.dropout(a, dropout, rng)), params[pre + "ln1.g"], params[pre + "ln1.b"], cfg.ln_eps)
        h = dc.gelu(dc.affine(x, params[pre + "ff1.w"], params[pre + "ff1.b"]))
        h = dc.affine(h, params[pre + "ff2.w"], params[pre + "ff2.b"])
        x = dc.layer_norm(dc.add(x, dc.dropout(h, dropout, rng)), params[pre + "ln2.g"], params[pre + "ln2.b"], cfg.ln_eps)
    x = dc.mul(x, mask[..., None].astype(np.float64))
    return x, mask


def encode_node(layout: PairLayout, params: Mapping[str, Tensor], cfg: EncoderConfig) -> EncodedNode:
    H, mask = encode_batch([layout], params, cfg)
    return EncodedNode(H[0], layout, mask[0])


def encode_group(layouts: Sequence[PairLayout], params: Mapping[str, Tensor], cfg: EncoderConfig) -> list[EncodedNode]:
    if not layouts:
        raise ContractError("empty hypothesis group")
    H, mask = encode_batch(layouts, params, cfg)
    return [EncodedNode(H[r, :len(lay)], lay, mask[r, :len(lay)]) for r, lay in enumerate(layouts)]


# ---------------------------------------------------------------- checkpoints


class CheckpointVersionError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict) -> None:
    """Named arrays plus a JSON metadata blob in one ``.npz`` container."""
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **meta}
    entries = {f"p/{k}": np.asarray(v) for k, v in arrays.items()}
    entries["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    # fixed timestamps keep the file byte-identical across runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise CheckpointVersionError(f"{path}: not a checkpoint (no metadata)")
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: unsupported checkpoint {meta.get('format')} v{meta.get('version')}")
        arrays = {k[2:]: z[k].copy() for k in z.files if k.startswith("p/")}
    return arrays, meta


def config_to_dict(cfg) -> dict:
    return asdict(cfg)
