"""Adam training with gradient accumulation, dev selection, checkpoints and gradient checks."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .data import HypothesisGroup
from .diffcore import Tensor
from .encoder import load_checkpoint, save_checkpoint
from .head import head_forward
from .metrics import pcc, predict_labels, token_prf, UndefinedCorrelation
from .model import GroupBatch, ModelConfig, VerNet
from .textpipe import Vocabulary

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 8
    accumulation: int = 4
    epochs: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dev_metric: str = "token_f05"
    max_steps: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "accumulation", "epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dev_metric not in ("token_f05", "pcc", "loss"):
            raise ValueError("dev_metric must be token_f05, pcc or loss")


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, scale: float = 1.0) -> None:
        """Update every parameter from ``scale * grad``; missing grads count as zero."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad * scale if p.grad is not None else np.zeros_like(p.data)
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array(self.t)
        return out

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"])
        for k in self.m:
            self.m[k] = np.array(arrays[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(arrays[f"adam.v.{k}"], dtype=np.float64)


# ---------------------------------------------------------------- evaluation


def predict(model: VerNet, groups: Sequence[HypothesisGroup], batch_size: int = 16):
    """P(y=1) rows per node (positions 0..T_k-1), for groups with gold."""
    out = []
    for i in range(0, len(groups), batch_size):
        batches = [model.prepare(g, with_labels=True) for g in groups[i:i + batch_size]]
        Hs = model.encode(batches)
        hp = model.head_params
        for b, H in zip(batches, Hs):
            if model.config.kind == "vernet":
                probs = head_forward(H, b.m, b.lengths, hp).probs.data
            else:
                probs = dc.softmax(dc.affine(H, hp["ged_out.w"], hp["ged_out.b"]), axis=-1).data
            out.append((b, probs[..., 1]))
    return out


def evaluate(model: VerNet, groups: Sequence[HypothesisGroup], batch_size: int = 16) -> dict:
    """Token detection P/R/F0.5 (source side, hypothesis side, both) and sentence PCC."""
    pred = {"src": [], "hyp": [], "all": []}
    gold = {"src": [], "hyp": [], "all": []}
    fs, f05 = [], []
    for b, p1 in predict(model, groups, batch_size):
        for k, lay in enumerate(b.layouts):
            t = b.labels.targets[k]
            row = p1[k, :len(lay)]
            for side, sl in (("src", slice(1, lay.m + 2)), ("hyp", slice(lay.m + 2, len(lay))),
                             ("all", slice(1, len(lay)))):
                pred[side].append(predict_labels(row[sl]))
                gold[side].append(t[sl].tolist())
            fs.append(float(row[lay.m + 2:].mean()))
            f05.append(b.labels.f05[k])
    res = {}
    for side in ("src", "hyp", "all"):
        prf = token_prf(pred[side], gold[side])
        res[f"{side}_precision"] = prf.precision
        res[f"{side}_recall"] = prf.recall
        res[f"{side}_f05"] = prf.f_beta
    res["token_f05"] = res["all_f05"]
    try:
        res["pcc"] = pcc(fs, f05)
    except (UndefinedCorrelation, ValueError):
        res["pcc"] = 0.0
    return res


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: VerNet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -math.inf
    steps: int = 0
    losses: list[float] = field(default_factory=list)
    trainer: "Trainer | None" = None


class Trainer:
    """Owns the model, optimizer and data order; resumable from checkpoints."""

    def __init__(self, model: VerNet, config: TrainConfig):
        self.model = model
        self.config = config
        self.opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0
        self.cursor = 0
        self.order: np.ndarray | None = None
        self.losses: list[float] = []

    # ------------------------------------------------------------ stepping

    def _forward_backward(self, batches: Sequence[GroupBatch]) -> float:
        drop_rng = self.rng if (self.model.config.encoder_dropout > 0 or self.model.config.head_dropout > 0) else None
        Hs = self.model.encode(batches, drop_rng)
        total = None
        value = 0.0
        for b, H in zip(batches, Hs):
            loss = self.model.group_loss(b, H, drop_rng)
            value += loss.item()
            total = loss if total is None else dc.add(total, loss)
        dc.backward(total)
        return value

    def _step(self, prepared: Sequence[GroupBatch]) -> float | None:
        cfg = self.config
        self.model.zero_grad()
        acc_loss, acc_groups = 0.0, 0
        for _ in range(cfg.accumulation):
            if self.cursor >= len(self.order):
                break
            idx = self.order[self.cursor:self.cursor + cfg.batch_size]
            self.cursor += len(idx)
            acc_loss += self._forward_backward([prepared[i] for i in idx])
            acc_groups += len(idx)
        if acc_groups == 0:
            return None
        mean_loss = acc_loss / acc_groups
        if not math.isfinite(mean_loss) or any(
                p.grad is not None and not np.all(np.isfinite(p.grad)) for p in self.model.params.values()):
            raise TrainingDiverged(f"non-finite loss/gradient at step {self.opt.t + 1} (loss={mean_loss})")
        # accumulated grads are sums over groups; the step uses their mean
        self.opt.step(scale=1.0 / acc_groups)
        self.model.zero_grad()
        self.losses.append(mean_loss)
        return mean_loss

    def run_epoch(self, prepared: Sequence[GroupBatch], max_steps: int | None = None,
                  log_fn: Callable[[dict], None] | None = None) -> list[float]:
        """Continue the current epoch (starting a new one if needed); returns step losses."""
        if self.order is None:
            self.order = self.rng.permutation(len(prepared))
            self.cursor = 0
        losses: list[float] = []
        while self.cursor < len(self.order) and (max_steps is None or len(losses) < max_steps):
            loss = self._step(prepared)
            if loss is None:
                break
            losses.append(loss)
            if log_fn is not None:
                log_fn({"step": self.opt.t, "epoch": self.epoch, "loss": loss})
        if self.cursor >= len(self.order):
            self.order = None
            self.epoch += 1
        return losses

    def train_steps(self, prepared: Sequence[GroupBatch], n_steps: int,
                    log_fn: Callable[[dict], None] | None = None) -> list[float]:
        """Exactly ``n_steps`` optimizer steps, crossing epoch boundaries as needed."""
        losses: list[float] = []
        while len(losses) < n_steps:
            losses.extend(self.run_epoch(prepared, n_steps - len(losses), log_fn))
        return losses

    # ------------------------------------------------------------ checkpoints

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        arrays = {f"param.{k}": v for k, v in self.model.state().items()}
        arrays.update(self.opt.state())
        arrays["trainer.order"] = self.order if self.order is not None else np.zeros(0, dtype=np.int64)
        meta = {
            "model": self.model.config.to_dict(),
            "train": asdict(self.config),
            "vocab": self.model.vocab.to_list(),
            "trainer": {"epoch": self.epoch, "cursor": self.cursor, "has_order": self.order is not None,
                        "rng": self.rng.bit_generator.state},
            "losses": self.losses,
        }
        if extra:
            meta.update(extra)
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Trainer":
        arrays, meta = load_checkpoint(path)
        model = model_from_arrays(arrays, meta)
        tr = cls(model, TrainConfig(**meta["train"]))
        if "adam.t" in arrays:
            tr.opt.load_state(arrays)
        st = meta.get("trainer", {})
        tr.epoch = st.get("epoch", 0)
        tr.cursor = st.get("cursor", 0)
        tr.order = arrays["trainer.order"].astype(np.int64) if st.get("has_order") else None
        if "rng" in st:
            tr.rng.bit_generator.state = st["rng"]
        tr.losses = list(meta.get("losses", []))
        return tr


def model_from_arrays(arrays: Mapping[str, np.ndarray], meta: dict) -> VerNet:
    config = ModelConfig.from_dict(meta["model"])
    vocab = Vocabulary.from_mapping({t: i for i, t in enumerate(meta["vocab"])})
    model = VerNet(config, vocab)
    model.load_state({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
    return model


def load_model(path: str | Path) -> VerNet:
    arrays, meta = load_checkpoint(path)
    return model_from_arrays(arrays, meta)


def train(model: VerNet, train_groups: Sequence[HypothesisGroup], config: TrainConfig,
          dev_groups: Sequence[HypothesisGroup] | None = None,
          log_fn: Callable[[dict], None] | None = None) -> TrainResult:
    """Train for ``config.epochs``; keeps the parameters of the best dev epoch."""
    if not train_groups:
        raise ValueError("empty training set")
    prepared = [model.prepare(g, with_labels=True) for g in train_groups]
    trainer = Trainer(model, config)
    result = TrainResult(model)
    best_state = None
    for epoch in range(config.epochs):
        budget = None
        if config.max_steps:
            budget = config.max_steps - trainer.opt.t
            if budget <= 0:
                break
        losses = trainer.run_epoch(prepared, budget, log_fn)
        result.losses.extend(losses)
        rec = {"epoch": epoch, "steps": trainer.opt.t,
               "train_loss": float(np.mean(losses)) if losses else float("nan")}
        if dev_groups:
            metrics = evaluate(model, dev_groups)
            rec.update({f"dev_{k}": v for k, v in metrics.items()})
            score = -rec["train_loss"] if config.dev_metric == "loss" else metrics[config.dev_metric]
        else:
            score = -rec["train_loss"]
        result.history.append(rec)
        if log_fn is not None:
            log_fn(rec)
        if score > result.best_metric:
            result.best_metric = score
            result.best_epoch = epoch
            best_state = model.state()
    if best_state is not None:
        model.load_state(best_state)
    result.steps = trainer.opt.t
    result.trainer = trainer
    return result


# ---------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    worst_param: str
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def lines(self) -> list[str]:
        w = max(len(k) for k in self.per_param)
        out = [f"{k:<{w}}  {v:.3e}" for k, v in self.per_param.items()]
        out.append(f"{'max':<{w}}  {self.max_rel_error:.3e}  ({self.worst_param})")
        out.append("PASS" if self.passed else "FAIL")
        return out


def rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], step: float = 1e-5,
               tolerance: float = 1e-4, analytic: Mapping[str, np.ndarray] | None = None) -> GradCheckReport:
    """Central finite differences against backprop for every element of every parameter.

    ``analytic`` substitutes precomputed gradients (used to confirm the check
    catches a corrupted gradient).
    """
    if analytic is None:
        for p in params.values():
            p.grad = None
        dc.backward(loss_fn())
        analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
        for p in params.values():
            p.grad = None
    per = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            num[i] = (up - down) / (2 * step)
        per[name] = float(rel_error(analytic[name].reshape(-1), num).max())
    worst = max(per, key=per.get)
    return GradCheckReport(per[worst], per, worst, tolerance)


def write_log(path: str | Path) -> Callable[[dict], None]:
    fh = open(path, "w", encoding="utf-8")

    def log_fn(rec: dict) -> None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

    log_fn.close = fh.close  # type: ignore[attr-defined]
    return log_fn
