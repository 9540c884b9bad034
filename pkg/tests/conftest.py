import numpy as np
import pytest

from vernet.data import Hypothesis, HypothesisGroup
from vernet.encoder import EncoderConfig
from vernet.model import ModelConfig, VerNet
from vernet.textpipe import build_vocab


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


WORDS = [f"w{i}" for i in range(10)]


def toy_group(rng, m=4, K=3, max_n=5, gold=True):
    src = [str(w) for w in rng.choice(WORDS, size=m)]
    hyps = [Hypothesis([str(w) for w in rng.choice(WORDS, size=int(rng.integers(1, max_n + 1)))],
                       float(-k)) for k in range(K)]
    g = list(src)
    g[0] = "w9" if g[0] != "w9" else "w8"
    return HypothesisGroup(src, hyps, [g] if gold else [])


def toy_model(d=8, layers=1, heads=2, ff=16, seed=0, init_std=0.5, **kw):
    vocab = build_vocab([WORDS])
    enc = EncoderConfig(vocab_size=len(vocab), d_model=d, layers=layers, heads=heads, ff_dim=ff,
                        max_positions=40, seed=seed, init_std=init_std)
    return VerNet(ModelConfig(enc, max_len=40, **kw), vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
