"""Encoder + head bundled with a vocabulary: forward passes and losses per group."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .annotator import label_tokens
from .data import HypothesisGroup
from .diffcore import ContractError, Tensor
from .encoder import EncoderConfig, encode_batch, init_encoder_params
from .head import gqe_score, head_forward, init_head_params, qe_score
from .metrics import sentence_f05
from .textpipe import DEFAULT_MAX_LEN, PairLayout, Vocabulary, encode_pair

MODEL_KINDS = ("vernet", "ged", "gqe", "qe")
MASK_POLICIES = ("joint", "hyp", "src")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    kind: str = "vernet"
    mask_policy: str = "joint"
    max_len: int = DEFAULT_MAX_LEN
    head_dropout: float = 0.0
    encoder_dropout: float = 0.0
    lowercase: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}")
        if self.mask_policy not in MASK_POLICIES:
            raise ValueError(f"mask policy must be one of {MASK_POLICIES}")
        if self.max_len > self.encoder.max_positions:
            raise ValueError("max_len exceeds encoder max_positions")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)


@dataclass
class GroupLabels:
    """Per-node targets over padded positions (position 0 unused)."""

    targets: list[np.ndarray]
    sentence_correct: list[int]
    f05: list[float]


@dataclass
class GroupBatch:
    group: HypothesisGroup
    layouts: list[PairLayout]
    m: int
    lengths: np.ndarray
    labels: GroupLabels | None = None


def _fit_labels(labels: list[int], keep: int) -> list[int]:
    """Labels for the first ``keep`` tokens plus the end-of-sentence slot."""
    if keep == len(labels) - 1:
        return labels
    return labels[:keep] + [labels[-1]]


def make_labels(group: HypothesisGroup, layouts: Sequence[PairLayout]) -> GroupLabels:
    gold = group.gold
    if gold is None:
        raise ContractError("training labels need a gold reference")
    src_labels = label_tokens(group.source, gold)
    targets, correct, f05 = [], [], []
    for hyp, lay in zip(group.hypotheses, layouts):
        t = np.ones(len(lay), dtype=np.int64)
        t[1:lay.m + 2] = _fit_labels(src_labels, lay.m)
        t[lay.m + 2:] = _fit_labels(label_tokens(hyp.tokens, gold), lay.n)
        targets.append(t)
        correct.append(int(hyp.tokens in group.golds))
        f05.append(sentence_f05(group.source, hyp.tokens, group.golds))
    return GroupLabels(targets, correct, f05)


class VerNet:
    """Parameters, vocabulary and config of one model."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, params: dict[str, Tensor] | None = None):
        if config.encoder.vocab_size != len(vocab):
            raise ValueError("encoder vocab_size must equal the vocabulary size")
        self.config = config
        self.vocab = vocab
        if params is None:
            rng = np.random.default_rng(config.encoder.seed)
            params = {f"enc.{k}": v for k, v in init_encoder_params(config.encoder, rng).items()}
            params.update({f"head.{k}": v for k, v in
                           init_head_params(config.encoder.d_model, rng, config.encoder.init_std).items()})
        self.params = params

    # ------------------------------------------------------------ params

    @property
    def enc_params(self) -> dict[str, Tensor]:
        return {k[4:]: v for k, v in self.params.items() if k.startswith("enc.")}

    @property
    def head_params(self) -> dict[str, Tensor]:
        return {k[5:]: v for k, v in self.params.items() if k.startswith("head.")}

    def trainable(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ContractError(f"parameter names differ: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ContractError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    # ------------------------------------------------------------ batching

    def prepare(self, group: HypothesisGroup, with_labels: bool = False) -> GroupBatch:
        if group.k < 1:
            raise ContractError("a group needs at least one hypothesis")
        layouts = [encode_pair(group.source, h.tokens, self.vocab, self.config.max_len) for h in group.hypotheses]
        m = layouts[0].m
        if any(l.m != m for l in layouts):
            # a long hypothesis can force the source shorter; keep one shared m
            m = min(l.m for l in layouts)
            layouts = [encode_pair(group.source[:m], h.tokens, self.vocab, self.config.max_len)
                       for h in group.hypotheses]
        lengths = np.array([len(l) for l in layouts])
        labels = make_labels(group, layouts) if with_labels else None
        return GroupBatch(group, layouts, m, lengths, labels)

    def encode(self, batches: Sequence[GroupBatch], rng: np.random.Generator | None = None) -> list[Tensor]:
        """Encode every node of several groups in one pass; returns one (K, T, d) tensor per group."""
        layouts = [l for b in batches for l in b.layouts]
        H, _ = encode_batch(layouts, self.enc_params, self.config.encoder,
                            self.config.encoder_dropout if rng is not None else 0.0, rng)
        out, r = [], 0
        for b in batches:
            k = len(b.layouts)
            T = int(b.lengths.max())
            out.append(H[r:r + k, :T])
            r += k
        return out

    # ------------------------------------------------------------ losses

    def loss_weights(self, b: GroupBatch, T: int) -> np.ndarray:
        """(K, T) weights summing to 1: mean over nodes of the per-node mean."""
        K = len(b.layouts)
        w = np.zeros((K, T))
        for k, lay in enumerate(b.layouts):
            pol = self.config.mask_policy
            lo = 1 if pol in ("joint", "src") else lay.m + 2
            hi = lay.m + 2 if pol == "src" else len(lay)
            w[k, lo:hi] = 1.0 / (hi - lo)
        return w / K

    def group_loss(self, b: GroupBatch, H: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        if b.labels is None:
            raise ContractError("group_loss needs labels (training requires gold)")
        K, T, _ = H.shape
        kind = self.config.kind
        hp = self.head_params
        if kind in ("vernet", "ged"):
            targets = np.ones((K, T), dtype=np.int64)
            for k, t in enumerate(b.labels.targets):
                targets[k, :len(t)] = t
            if kind == "vernet":
                Hd = dc.dropout(H, self.config.head_dropout, rng)
                logits = head_forward(Hd, b.m, b.lengths, hp).logits
            else:
                logits = dc.affine(H, hp["ged_out.w"], hp["ged_out.b"])
            return dc.cross_entropy(logits, targets, self.loss_weights(b, T))
        H0 = H[:, 0]
        if kind == "gqe":
            logits = dc.affine(H0, hp["gqe_out.w"], hp["gqe_out.b"])
            return dc.cross_entropy(logits, np.asarray(b.labels.sentence_correct))
        pred = qe_score(H0, hp["qe_out.w"], hp["qe_out.b"])
        diff = dc.sub(pred, np.asarray(b.labels.f05))
        return dc.mean(dc.mul(diff, diff))

    # ------------------------------------------------------------ inference

    def score_group(self, group: HypothesisGroup, baselines: bool = False) -> dict:
        """Per-hypothesis sentence scores, per-token P(y=1), and node weights."""
        b = self.prepare(group)
        (H,) = self.encode([b])
        hp = self.head_params
        out: dict = {"m": b.m}
        kind = self.config.kind
        if kind == "vernet" or baselines:
            ho = head_forward(H, b.m, b.lengths, hp)
            vprobs = ho.probs.data
            out["gamma"] = ho.gamma.data.tolist()
        ged = dc.softmax(dc.affine(H, hp["ged_out.w"], hp["ged_out.b"]), axis=-1).data
        gqe = gqe_score(H[:, 0], hp["gqe_out.w"], hp["gqe_out.b"]).data
        qe = qe_score(H[:, 0], hp["qe_out.w"], hp["qe_out.b"]).data
        per_kind = {}
        if kind == "vernet" or baselines:
            per_kind["vernet"] = vprobs
        per_kind["ged"] = ged
        if kind != "vernet":
            out["gamma"] = None
        probs = per_kind["vernet"] if kind == "vernet" else ged
        hyps = []
        for k, lay in enumerate(b.layouts):
            p1 = probs[k, :, 1]
            src_p = p1[1:lay.m + 2]
            hyp_p = p1[lay.m + 2:len(lay)]
            if kind in ("vernet", "ged"):
                f = float(hyp_p.mean())
            elif kind == "gqe":
                f = float(gqe[k])
            else:
                f = float(qe[k])
            rec = {"f": f, "token_probs": hyp_p[:-1].tolist(), "sep_prob": float(hyp_p[-1]),
                   "source_token_probs": src_p.tolist()}
            if baselines:
                rec["baselines"] = {
                    "vernet": float(per_kind["vernet"][k, lay.m + 2:len(lay), 1].mean()),
                    "ged": float(ged[k, lay.m + 2:len(lay), 1].mean()),
                    "gqe": float(gqe[k]),
                    "qe": float(qe[k]),
                }
            hyps.append(rec)
        out["hypotheses"] = hyps
        return out
