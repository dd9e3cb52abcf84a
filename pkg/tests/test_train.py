import json

import numpy as np
import pytest

from pcsep.autodiff import Tensor
from pcsep.autodiff import checkpoint as ckpt
from pcsep.data import Dataset, make_synthetic
from pcsep.errors import ConfigError, NumericalError
from pcsep.train import (
    TrainConfig,
    Trainer,
    load_config,
    load_model,
    load_vision_init,
    sgd_step,
    warmup_vision,
    write_loss_file,
)

TINY = dict(batch_size=1, K=4, vision_channels=2, unet_channels=2, unet_levels=3, val_items=1,
            lr_rest=0.01, lr_vision=0.001)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return Dataset.from_manifest(make_synthetic(root, seed=1, identities=6, seconds=7.0,
                                                n_frames=3, n_points=150))


def tiny(**kw):
    return TrainConfig(**{**TINY, **kw})


# ---------------------------------------------------------------- sgd


def test_sgd_zero_grad_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    p["w"].grad = np.zeros(2)
    sgd_step(p, {}, {"w": 0.1})
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_sgd_first_step_is_plain_gradient_step():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    p["w"].grad = np.array([0.5, 4.0])
    sgd_step(p, {}, {"w": 0.1})
    np.testing.assert_array_equal(p["w"].data, np.array([1.0, -2.0]) - 0.1 * np.array([0.5, 4.0]))


def test_sgd_three_steps_on_quadratic_match_recursion():
    # f(w) = a/2 w^2, grad = a w
    a, lr, mu, w0 = 3.0, 0.05, 0.9, 2.0
    p = {"w": Tensor(np.array([w0]), requires_grad=True)}
    buffers = {}
    for _ in range(3):
        p["w"].grad = a * p["w"].data
        sgd_step(p, buffers, {"w": lr}, mu)
    w, buf = w0, 0.0
    for _ in range(3):
        buf = mu * buf + a * w
        w = w - lr * buf
    assert abs(p["w"].data[0] - w) <= 1e-12


def test_sgd_nan_names_parameter():
    p = {"good": Tensor(np.ones(2), requires_grad=True), "unet.bad": Tensor(np.ones(2), requires_grad=True)}
    p["good"].grad = np.ones(2)
    p["unet.bad"].grad = np.array([1.0, np.nan])
    with pytest.raises(NumericalError, match="unet.bad"):
        sgd_step(p, {}, {"good": 0.1, "unet.bad": 0.1})


def test_parameter_group_learning_rates(dataset):
    t = Trainer(tiny(lr_rest=0.02, lr_vision=0.003), dataset)
    before = {k: v.data.copy() for k, v in t.params.items()}
    for p in t.params.values():
        p.grad = np.ones_like(p.data)
    sgd_step(t.params, {}, t.lr_map)
    for k, p in t.params.items():
        lr = 0.003 if k.startswith("vision.") else 0.02
        np.testing.assert_allclose(before[k] - p.data, lr, rtol=1e-12, err_msg=k)
    assert any(k.startswith("vision.") for k in t.params)


# ---------------------------------------------------------------- config


def test_config_precedence(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "iterations": 7, "lr_rest": 0.5}))
    monkeypatch.delenv("PCSEP_SEED", raising=False)
    assert load_config(str(path)).seed == 1
    monkeypatch.setenv("PCSEP_SEED", "5")
    cfg = load_config(str(path))
    assert (cfg.seed, cfg.iterations, cfg.lr_rest) == (5, 7, 0.5)
    cfg = load_config(str(path), {"seed": 9, "iterations": None})
    assert (cfg.seed, cfg.iterations) == (9, 7)


def test_config_defaults():
    c = TrainConfig()
    assert (c.momentum, c.lr_vision, c.lr_rest, c.K) == (0.9, 1e-4, 1e-3, 16)


@pytest.mark.parametrize("bad", [{"iterations": 0}, {"lr_rest": -1.0}, {"momentum": 1.0},
                                 {"conditioning": "audio"}, {"nonsense": 1}])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(bad)


def test_config_file_errors(tmp_path, monkeypatch):
    monkeypatch.delenv("PCSEP_SEED", raising=False)
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "none.json"))
    p = tmp_path / "bad.json"
    p.write_text("{iterations: 3")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(p))
    monkeypatch.setenv("PCSEP_SEED", "x")
    with pytest.raises(ConfigError, match="PCSEP_SEED"):
        load_config()


def test_label_forces_k5():
    assert TrainConfig(conditioning="label", K=16).K == 5


# ---------------------------------------------------------------- training loop


def test_determinism(dataset):
    a = Trainer(tiny(), dataset)
    b = Trainer(tiny(), dataset)
    assert a.run(3, log_every=0) == b.run(3, log_every=0)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_resume_is_bit_exact(dataset, tmp_path):
    full = Trainer(tiny(), dataset)
    full.run(3, log_every=0)
    part = Trainer(tiny(), dataset)
    part.run(2, log_every=0)
    part.save(tmp_path / "mid.ckpt")
    resumed = Trainer.resume(tmp_path / "mid.ckpt", dataset)
    resumed.run(1, log_every=0)
    assert resumed.losses == full.losses
    assert resumed.state.iteration == 3
    for k, v in full.model.state_dict().items():
        np.testing.assert_array_equal(resumed.model.state_dict()[k], v, err_msg=k)
    for k, v in full.buffers.items():
        np.testing.assert_array_equal(resumed.buffers[k], v, err_msg=k)


def test_validation_does_not_mutate(dataset):
    t = Trainer(tiny(), dataset)
    t.run(1, log_every=0)
    before = t.model.state_dict()
    v1 = t.validation_loss()
    v2 = t.validation_loss()
    assert v1 == v2
    after = t.model.state_dict()
    for k in before:
        np.testing.assert_array_equal(before[k], after[k], err_msg=k)
    assert t.model.unet.training


def test_run_writes_checkpoints_and_curves(dataset, tmp_path):
    t = Trainer(tiny(val_every=2), dataset, tmp_path)
    t.run(4, log_every=0)
    assert {"best.ckpt", "last.ckpt", "loss.txt", "val_loss.txt"} <= {p.name for p in tmp_path.iterdir()}
    rows = np.loadtxt(tmp_path / "loss.txt")
    np.testing.assert_array_equal(rows[:, 0], [1, 2, 3, 4])
    np.testing.assert_array_equal(rows[:, 1], t.losses)
    val = np.loadtxt(tmp_path / "val_loss.txt", ndmin=2)
    np.testing.assert_array_equal(val[:, 0], [2, 4])
    assert t.state.best_val == val[:, 1].min()


def test_numerical_abort_leaves_resumable_checkpoint(dataset, tmp_path):
    t = Trainer(tiny(), dataset, tmp_path)
    t.run(1, log_every=0)
    t.params["unet.out_conv.bias"].data[...] = np.nan
    with pytest.raises(NumericalError):
        t.run(1, log_every=0)
    back = Trainer.resume(tmp_path / "last.ckpt", dataset)
    assert back.state.iteration == 1
    assert np.isnan(back.params["unet.out_conv.bias"].data).all()


def test_write_loss_file_roundtrip(tmp_path):
    vals = [0.1, 1 / 3, 2.5e-9]
    write_loss_file(tmp_path / "l.txt", vals, [10, 20, 30])
    back = np.loadtxt(tmp_path / "l.txt")
    np.testing.assert_array_equal(back[:, 0], [10, 20, 30])
    np.testing.assert_array_equal(back[:, 1], vals)


def test_load_model_predicts_like_trainer(dataset, tmp_path):
    t = Trainer(tiny(conditioning="label"), dataset)
    t.run(1, log_every=0)
    t.save(tmp_path / "m.ckpt")
    m = load_model(tmp_path / "m.ckpt")
    from pcsep.train import sample_batch

    items = sample_batch(dataset, t.config, 99, split="test", augment=False)
    t.model.eval()
    np.testing.assert_array_equal(m.predict(items).data, t.model.predict(items).data)
    it = items[0]
    single = m.mask_for(it.mixture_spec.logfreq, instrument=it.instruments[1])
    np.testing.assert_allclose(single, m.predict(items).data[0, 1], atol=1e-12)


def test_mask_for_requires_conditioning(dataset):
    t = Trainer(tiny(), dataset)
    with pytest.raises(ConfigError):
        t.model.mask_for(np.zeros((256, 256)))
    lab = Trainer(tiny(conditioning="label"), dataset)
    with pytest.raises(ConfigError):
        lab.model.mask_for(np.zeros((256, 256)))


def test_warmup_and_vision_init(dataset, tmp_path):
    src = Trainer(tiny(), dataset)
    losses = warmup_vision(src.model, dataset, 3, lr=0.01, batch_size=2, log_every=0)
    assert len(losses) == 3 and all(np.isfinite(losses))
    src.save(tmp_path / "w.ckpt")
    dst = Trainer(tiny(seed=5), dataset)
    load_vision_init(dst.model, tmp_path / "w.ckpt")
    s, d = src.model.state_dict(), dst.model.state_dict()
    for k in s:
        if "vision." in k:
            np.testing.assert_array_equal(s[k], d[k], err_msg=k)
    assert not np.array_equal(s["unet.out_conv.weight"], d["unet.out_conv.weight"])
    assert ckpt.decode_meta(ckpt.load(tmp_path / "w.ckpt"), "config")["K"] == 4
