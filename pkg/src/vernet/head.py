"""Multi-hypothesis verification head.

A group of K source-hypothesis nodes is held as one padded tensor ``H`` of
shape (K, T, d) with per-node lengths ``T_k = m + n_k + 3``.  The graph is
fully connected, self-edges included.

* node interaction: every token of node k attends over tokens 1..T_l-1 of
  node l through a bilinear form, giving ``V[k, l]`` (K, K, T, d);
* node selection: attention-over-attention between the source side
  (tokens + source [SEP]) and hypothesis side (tokens + final [SEP]) of each
  node gives one logit per node, softmaxed over nodes into ``gamma``;
* verification: ``V_k = sum_l gamma_l V[k, l]``, then each token is
  classified from ``[H * V ; H ; V]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor

HEAD_PARAM_SHAPES = {
    "int.w": ("d", "d"),
    "sel.w": ("d", "d"),
    "sel_out.w": ("3d", 1),
    "sel_out.b": (1,),
    "cls_out.w": ("3d", 2),
    "cls_out.b": (2,),
    "ged_out.w": ("d", 2),
    "ged_out.b": (2,),
    "gqe_out.w": ("d", 2),
    "gqe_out.b": (2,),
    "qe_out.w": ("d", 1),
    "qe_out.b": (1,),
}


def init_head_params(d: int, rng: np.random.Generator, std: float = 0.02) -> dict[str, Tensor]:
    params = {}
    for name, shape in HEAD_PARAM_SHAPES.items():
        dims = tuple({"d": d, "3d": 3 * d}.get(s, s) for s in shape)
        data = np.zeros(dims) if name.endswith(".b") else rng.normal(0.0, std, size=dims)
        params[name] = dc.parameter(data, name=name)
    return params


def node_mask(lengths: Sequence[int], T: int) -> np.ndarray:
    """(K, T) validity of positions 0..T_k-1."""
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def interaction_key_mask(lengths: Sequence[int], T: int) -> np.ndarray:
    """(K, T) attendable positions 1..T_k-1; [CLS] and padding excluded."""
    m = node_mask(lengths, T)
    m[:, 0] = False
    return m


# ---------------------------------------------------------------- interaction


def interaction_weights(H_k: Tensor, H_l: Tensor, W_int: Tensor, key_mask=None) -> Tensor:
    """Attention of every token of node k over the tokens of node l: (..., T_k, T_l).

    ``H_k`` (..., T_k, d) and ``H_l`` (..., T_l, d) broadcast over leading
    axes.  ``key_mask`` (..., T_l) marks attendable positions of node l; by
    default all but position 0.
    """
    if H_k.shape[-1] != H_l.shape[-1] or W_int.shape != (H_k.shape[-1], H_l.shape[-1]):
        raise ContractError("node interaction needs matching model dimensions")
    if key_mask is None:
        key_mask = np.ones(H_l.shape[:-1], dtype=bool)
        key_mask[..., 0] = False
    logits = dc.matmul(dc.matmul(H_k, W_int), dc.transpose(H_l))
    return dc.softmax(logits, axis=-1, mask=np.asarray(key_mask)[..., None, :])


def node_interaction(H_k: Tensor, H_l: Tensor, W_int: Tensor, key_mask=None) -> Tensor:
    """Evidence read from node l for every token of node k."""
    return dc.matmul(interaction_weights(H_k, H_l, W_int, key_mask), H_l)


def interaction_all(H: Tensor, lengths: Sequence[int], W_int: Tensor) -> Tensor:
    """``V[k, l]`` for every ordered node pair: (K, K, T, d)."""
    K, T, d = H.shape
    Hk = dc.reshape(H, (K, 1, T, d))
    Hl = dc.reshape(H, (1, K, T, d))
    km = interaction_key_mask(lengths, T)[None, :, :]
    return node_interaction(Hk, Hl, W_int, km)


# ---------------------------------------------------------------- selection


@dataclass
class Selection:
    gamma: Tensor      # (K,)
    logits: Tensor     # (K,)
    beta_src: Tensor   # (K, m+1)
    beta_hyp: Tensor   # (K, J) zero beyond each node's n_l+1
    h_src: Tensor      # (K, d)
    h_hyp: Tensor      # (K, d)
    hyp_mask: np.ndarray


def node_selection_scores(H: Tensor, m: int, lengths: Sequence[int], W_sel: Tensor,
                          sel_w: Tensor, sel_b: Tensor | None) -> Selection:
    K, T, d = H.shape
    lengths = np.asarray(lengths)
    if np.any(lengths - m - 3 < 0) or np.any(lengths > T):
        raise ContractError("node lengths inconsistent with the shared source length")
    Hs = H[:, 1:m + 2]                                  # (K, m+1, d)
    Hh = H[:, m + 2:]                                   # (K, J, d)
    J = T - m - 2
    hyp_mask = np.arange(J)[None, :] < (lengths - m - 2)[:, None]
    M = dc.matmul(dc.matmul(Hs, W_sel), dc.transpose(Hh))    # (K, m+1, J)
    col = hyp_mask[:, None, :]
    beta_src = dc.mean(dc.softmax(M, axis=1), axis=2, mask=np.broadcast_to(col, M.shape))
    beta_hyp = dc.mean(dc.softmax(M, axis=2, mask=col), axis=1)
    h_src = dc.reshape(dc.matmul(dc.reshape(beta_src, (K, 1, m + 1)), Hs), (K, d))
    h_hyp = dc.reshape(dc.matmul(dc.reshape(beta_hyp, (K, 1, J)), Hh), (K, d))
    feats = dc.concat([dc.mul(h_src, h_hyp), h_src, h_hyp], axis=-1)
    logits = dc.reshape(dc.affine(feats, sel_w, sel_b), (K,))
    gamma = dc.softmax(logits, axis=0)
    return Selection(gamma, logits, beta_src, beta_hyp, h_src, h_hyp, hyp_mask)


# ---------------------------------------------------------------- aggregation


def verification_reps(fine, gamma) -> Tensor:
    """Gamma-weighted sum over source nodes l.

    ``fine`` is either the (K, K, T, d) tensor from :func:`interaction_all`
    or a list of K tensors ``V[l -> k]`` for one target node.
    """
    if isinstance(fine, (list, tuple)):
        rows = {f.shape for f in fine}
        if len(rows) != 1:
            raise ContractError(f"fine-grained representations disagree in shape: {rows}")
        fine = dc.stack(fine, axis=0)                  # (K, T_k, d)
        g = gamma if isinstance(gamma, Tensor) else dc.tensor(gamma)
        return dc.tsum(dc.mul(fine, dc.reshape(g, (-1, 1, 1))), axis=0)
    g = gamma if isinstance(gamma, Tensor) else dc.tensor(gamma)
    K = fine.shape[1]
    return dc.tsum(dc.mul(fine, dc.reshape(g, (1, K, 1, 1))), axis=1)


def token_logits(H: Tensor, V: Tensor, cls_w: Tensor, cls_b: Tensor | None) -> Tensor:
    feats = dc.concat([dc.mul(H, V), H, V], axis=-1)
    return dc.affine(feats, cls_w, cls_b)


def token_quality(H: Tensor, V: Tensor, cls_w: Tensor, cls_b: Tensor | None = None) -> Tensor:
    """P(y | token) rows over (..., T, 2); column 1 is 'correct'."""
    return dc.softmax(token_logits(H, V, cls_w, cls_b), axis=-1)


def sentence_score(P, m: int, n: int) -> float:
    """Mean P(y=1) over the hypothesis tokens and the final [SEP]."""
    P = P.data if isinstance(P, Tensor) else np.asarray(P)
    return float(P[m + 2:m + n + 3, 1].mean())


# ---------------------------------------------------------------- baselines


def ged_baseline(H: Tensor, m: int, n: int, ged_w: Tensor, ged_b: Tensor | None) -> tuple[Tensor, float]:
    """Token probabilities straight from H, no graph; sentence score over the hypothesis side."""
    P = dc.softmax(dc.affine(H, ged_w, ged_b), axis=-1)
    return P, sentence_score(P, m, n)


def gqe_score(H0: Tensor, gqe_w: Tensor, gqe_b: Tensor | None) -> Tensor:
    """P(sentence correct) from the [CLS] row."""
    return dc.softmax(dc.affine(H0, gqe_w, gqe_b), axis=-1)[..., 1]


def qe_score(H0: Tensor, qe_w: Tensor, qe_b: Tensor | None) -> Tensor:
    """Predicted F0.5 in (0, 1) from the [CLS] row."""
    return dc.sigmoid(dc.affine(H0, qe_w, qe_b))[..., 0]


# ---------------------------------------------------------------- full head


@dataclass
class HeadOutput:
    logits: Tensor        # (K, T, 2)
    probs: Tensor         # (K, T, 2)
    selection: Selection
    gamma: Tensor
    V: Tensor             # (K, T, d)


def head_forward(H: Tensor, m: int, lengths: Sequence[int], params: Mapping[str, Tensor],
                 gamma: Tensor | np.ndarray | None = None) -> HeadOutput:
    """Run both attentions and the token classifier over one group.

    ``gamma`` overrides the node-selection weights (used for ablations and
    the single-node equivalence check).
    """
    sel = node_selection_scores(H, m, lengths, params["sel.w"], params["sel_out.w"], params["sel_out.b"])
    g = sel.gamma if gamma is None else gamma
    fine = interaction_all(H, lengths, params["int.w"])
    V = verification_reps(fine, g)
    logits = token_logits(H, V, params["cls_out.w"], params["cls_out.b"])
    probs = dc.softmax(logits, axis=-1)
    return HeadOutput(logits, probs, sel, g if isinstance(g, Tensor) else dc.tensor(g), V)
