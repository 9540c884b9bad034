import math

import numpy as np
import pytest

from vernet import diffcore as dc
from vernet.cli import DEFAULTS, gradcheck_setup
from vernet.data import Hypothesis, HypothesisGroup
from vernet.head import head_forward
from vernet.trainer import Adam, TrainConfig, Trainer, TrainingDiverged, evaluate, grad_check, load_model, train

from conftest import toy_group, toy_model


def zero_cls(model):
    model.params["head.cls_out.w"].data[:] = 0.0
    model.params["head.cls_out.b"].data[:] = 0.0


def loss_of(model, group):
    b = model.prepare(group, with_labels=True)
    (H,) = model.encode([b])
    return b, H, model.group_loss(b, H)


def dataset_loss(model, groups):
    return float(np.mean([loss_of(model, g)[2].item() for g in groups]))


def groups_(n, seed=0, K=3):
    rng = np.random.default_rng(seed)
    return [toy_group(rng, K=K) for _ in range(n)]


# ---------------------------------------------------------------- loss


def test_zero_head_loss_is_ln2():
    model = toy_model()
    zero_cls(model)
    for g in groups_(3):
        assert abs(loss_of(model, g)[2].item() - math.log(2)) < 1e-12


def test_confident_correct_predictions_give_near_zero_loss():
    model = toy_model()
    zero_cls(model)
    model.params["head.cls_out.b"].data[:] = [-50.0, 50.0]
    src = ["w1", "w2", "w3"]
    g = HypothesisGroup(src, [Hypothesis(list(src)), Hypothesis(list(src))], [list(src)])
    assert loss_of(model, g)[2].item() < 1e-6


@pytest.mark.parametrize("policy", ["joint", "hyp", "src"])
def test_group_loss_matches_hand_summation(policy):
    model = toy_model(mask_policy=policy)
    g = groups_(1, seed=4, K=2)[0]
    b, H, loss = loss_of(model, g)
    logits = head_forward(H, b.m, b.lengths, model.head_params).logits.data
    total = 0.0
    for k, lay in enumerate(b.layouts):
        m, L = lay.m, len(lay)
        positions = {"joint": range(1, L), "hyp": range(m + 2, L), "src": range(1, m + 2)}[policy]
        node = 0.0
        for p in positions:
            z = logits[k, p]
            y = b.labels.targets[k][p]
            node += -(z[y] - math.log(math.exp(z[0]) + math.exp(z[1])))
        total += node / len(positions)
    assert abs(loss.item() - total / 2) < 1e-10


def test_masked_positions_get_zero_gradient():
    model = toy_model()
    b = model.prepare(groups_(1, seed=5, K=3)[0], with_labels=True)
    assert len(set(b.lengths.tolist())) > 1
    (H,) = model.encode([b])
    Hp = dc.parameter(H.data.copy())
    dc.backward(model.group_loss(b, Hp))
    for k, L in enumerate(b.lengths):
        assert np.all(Hp.grad[k, 0] == 0.0)
        assert np.all(Hp.grad[k, L:] == 0.0)
        assert np.any(Hp.grad[k, 1:L] != 0.0)


@pytest.mark.parametrize("kind", ["ged", "gqe", "qe"])
def test_baseline_losses_finite_and_differentiable(kind):
    model = toy_model(kind=kind)
    b, H, loss = loss_of(model, groups_(1)[0])
    assert math.isfinite(loss.item())
    dc.backward(loss)
    assert any(p.grad is not None and np.any(p.grad != 0) for p in model.params.values())


def test_group_loss_requires_labels():
    model = toy_model()
    b = model.prepare(groups_(1)[0])
    (H,) = model.encode([b])
    with pytest.raises(dc.ContractError):
        model.group_loss(b, H)


# ---------------------------------------------------------------- optimizer & training


def test_adam_reaches_quadratic_optimum():
    x = dc.parameter(np.array(0.0))
    opt = Adam({"x": x}, lr=0.05)
    for _ in range(2000):
        x.grad = None
        d = dc.sub(x, 3.0)
        dc.backward(dc.mul(d, d))
        opt.step()
    assert abs(float(x.data) - 3.0) < 1e-3


def test_descent_on_toy_set():
    data = groups_(10, seed=1)
    model = toy_model(init_std=0.1)
    before = dataset_loss(model, data)
    tr = Trainer(model, TrainConfig(learning_rate=1e-3, batch_size=2, accumulation=1))
    tr.train_steps([model.prepare(g, with_labels=True) for g in data], 50)
    assert dataset_loss(model, data) < before


def run_losses(seed=0):
    data = groups_(8, seed=2)
    model = toy_model(init_std=0.1)
    tr = Trainer(model, TrainConfig(learning_rate=1e-3, batch_size=2, accumulation=2, seed=seed))
    return tr.train_steps([model.prepare(g, with_labels=True) for g in data], 6)


def test_training_is_deterministic():
    assert run_losses() == run_losses()


def test_accumulation_equivalence():
    data = groups_(8, seed=3)
    states = []
    for bs, acc in ((4, 2), (8, 1), (2, 4)):
        model = toy_model(init_std=0.1)
        tr = Trainer(model, TrainConfig(learning_rate=1e-3, batch_size=bs, accumulation=acc))
        tr.train_steps([model.prepare(g, with_labels=True) for g in data], 1)
        states.append(model.state())
    for other in states[1:]:
        for k in states[0]:
            np.testing.assert_allclose(other[k], states[0][k], rtol=0, atol=1e-9, err_msg=k)


def test_checkpoint_resume_is_bit_identical(tmp_path):
    data = groups_(6, seed=6)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, accumulation=1, seed=9)
    model = toy_model(init_std=0.1)
    tr = Trainer(model, cfg)
    prepared = [model.prepare(g, with_labels=True) for g in data]
    tr.train_steps(prepared, 2)
    tr.save(tmp_path / "mid.ckpt")
    straight = tr.train_steps(prepared, 5)

    tr2 = Trainer.load(tmp_path / "mid.ckpt")
    prepared2 = [tr2.model.prepare(g, with_labels=True) for g in data]
    resumed = tr2.train_steps(prepared2, 5)
    assert resumed == straight
    for k, v in model.state().items():
        assert np.array_equal(v, tr2.model.state()[k])
    loaded = load_model(tmp_path / "mid.ckpt")
    assert set(loaded.params) == set(model.params)


def test_divergence_is_reported():
    data = groups_(2)
    model = toy_model()
    model.params["head.cls_out.w"].data[0, 0] = np.nan
    tr = Trainer(model, TrainConfig(learning_rate=1e-3, batch_size=2, accumulation=1))
    with pytest.raises(TrainingDiverged):
        tr.train_steps([model.prepare(g, with_labels=True) for g in data], 1)


def test_train_keeps_best_dev_epoch():
    data, dev = groups_(6, seed=7), groups_(4, seed=8)
    model = toy_model(init_std=0.1)
    res = train(model, data, TrainConfig(learning_rate=1e-3, batch_size=3, accumulation=1, epochs=3), dev)
    assert len(res.history) == 3 and res.steps == 6
    scores = [h["dev_token_f05"] for h in res.history]
    assert res.best_metric == max(scores)
    assert evaluate(model, dev)["token_f05"] == pytest.approx(res.best_metric)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(dev_metric="bleu")


# ---------------------------------------------------------------- gradient check


@pytest.fixture(scope="module")
def toy_check():
    return gradcheck_setup(dict(DEFAULTS))


def test_full_model_gradient_check(toy_check):
    model, loss_fn = toy_check
    report = grad_check(loss_fn, model.params, step=1e-5)
    assert report.passed, report.lines()
    assert set(report.per_param) == set(model.params)


def test_corrupted_gradient_fails_check(toy_check):
    model, loss_fn = toy_check
    params = {k: model.params[k] for k in ("head.cls_out.w", "head.int.w")}
    for p in model.params.values():
        p.grad = None
    dc.backward(loss_fn())
    analytic = {k: p.grad.copy() for k, p in params.items()}
    for p in model.params.values():
        p.grad = None
    assert grad_check(loss_fn, params, analytic=analytic).passed
    analytic["head.int.w"][0, 0] *= 1.01
    report = grad_check(loss_fn, params, analytic=analytic)
    assert not report.passed and report.worst_param == "head.int.w"


def test_fd_error_shrinks_with_step(toy_check):
    model, loss_fn = toy_check
    params = {k: model.params[k] for k in ("head.cls_out.w", "head.sel.w", "enc.layer0.ff1.w")}
    errs = [grad_check(loss_fn, params, step=h).max_rel_error for h in (1e-3, 1e-4, 1e-5)]
    assert errs[0] > errs[1] > errs[2], errs
