import math

import numpy as np
import pytest

from edmseg.autodiff import grad_check
from edmseg.errors import BadConfig, ShapeMismatch, TooLong
from edmseg.model import ModelConfig, build_forward, forward, init_params, param_shapes
from edmseg.train import loss_tensor


def toy(**kw):
    base = dict(d_in=32, d_model=16, n_layers=2, n_heads=4, max_frames=64)
    base.update(kw)
    return ModelConfig(**base)


def test_output_shapes():
    cfg = toy()
    out = forward(cfg, init_params(cfg, 0), np.random.default_rng(0).normal(size=(20, 32)))
    assert out.boundary_logits.shape == (20,)
    assert out.label_logits.shape == (20, 7)
    assert len(out.attention) == 2 and len(out.attention[0]) == 4


def test_heads_must_divide_width():
    with pytest.raises(BadConfig):
        ModelConfig(d_in=8, d_model=32, n_heads=5)


def test_xavier_bound_and_init_layout():
    cfg = toy()
    p = init_params(cfg, 1)
    assert p["proj.w"].shape == (32, 16)
    assert np.abs(p["proj.w"]).max() <= math.sqrt(6 / 48)
    assert not p["proj.b"].any()
    assert np.all(p["layer0.ln1.g"] == 1) and not p["layer0.ln1.b"].any()
    assert list(p) == list(param_shapes(cfg))
    assert cfg.d_ff == 64


def test_init_is_deterministic():
    a, b = init_params(toy(), 3), init_params(toy(), 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(toy(), 4)
    assert not np.array_equal(a["proj.w"], c["proj.w"])


def test_input_checks():
    cfg = toy(max_frames=10)
    p = init_params(cfg)
    with pytest.raises(ShapeMismatch):
        forward(cfg, p, np.zeros((5, 31)))
    with pytest.raises(TooLong):
        forward(cfg, p, np.zeros((11, 32)))


def test_inference_is_deterministic_and_dropout_is_seeded():
    cfg = toy(dropout_rate=0.3)
    p = init_params(cfg, 0)
    x = np.random.default_rng(1).normal(size=(12, 32))
    a, b = forward(cfg, p, x), forward(cfg, p, x)
    assert np.array_equal(a.label_logits, b.label_logits)
    t1 = forward(cfg, p, x, training=True, seed=9)
    t2 = forward(cfg, p, x, training=True, seed=9)
    t3 = forward(cfg, p, x, training=True, seed=10)
    assert np.array_equal(t1.label_logits, t2.label_logits)
    assert not np.array_equal(t1.label_logits, t3.label_logits)
    assert not np.array_equal(t1.label_logits, a.label_logits)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance_without_positions(seed):
    cfg = toy(use_positional=False)
    rng = np.random.default_rng(seed)
    p = init_params(cfg, seed)
    x = rng.normal(size=(15, 32))
    perm = rng.permutation(15)
    a = forward(cfg, p, x)
    b = forward(cfg, p, x[perm])
    assert np.allclose(b.boundary_logits, a.boundary_logits[perm], atol=1e-12)
    assert np.allclose(b.label_logits, a.label_logits[perm], atol=1e-12)


def test_positions_break_equivariance():
    cfg = toy()
    p = init_params(cfg, 0)
    x = np.random.default_rng(0).normal(size=(15, 32))
    perm = np.roll(np.arange(15), 1)
    assert not np.allclose(forward(cfg, p, x[perm]).label_logits, forward(cfg, p, x).label_logits[perm])


def test_attention_rows_sum_to_one():
    cfg = toy()
    out = forward(cfg, init_params(cfg, 2), np.random.default_rng(2).normal(size=(25, 32)) * 10)
    for layer in out.attention:
        for w in layer:
            assert np.abs(w.sum(axis=1) - 1).max() < 1e-12


def test_full_loss_gradient_on_toy_config():
    cfg = ModelConfig(d_in=6, d_model=8, n_layers=2, n_heads=2, d_ff=12, max_frames=16,
                      dropout_rate=0.0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 6))
    bt = np.zeros(7)
    bt[3] = 1.0
    lt = rng.integers(0, 7, 7)

    def build(tape, leaves):
        b, y, _ = build_forward(tape, cfg, leaves, x)
        return loss_tensor(tape, b, y, bt, lt, 1.0)

    params = {k: v + rng.normal(scale=0.1, size=v.shape) for k, v in init_params(cfg, 0).items()}
    report = grad_check(build, params)
    assert report["max"] < 1e-4, report["errors"]


@pytest.mark.slow
def test_full_size_smoke():
    # 4096 -> 2048 projection; one thin block keeps memory modest
    cfg = ModelConfig(d_in=4096, d_model=2048, n_layers=1, n_heads=8, d_ff=512, max_frames=8)
    p = init_params(cfg, 0)
    out = forward(cfg, p, np.random.default_rng(0).normal(size=(4, 4096)))
    assert out.boundary_logits.shape == (4,) and out.label_logits.shape == (4, 7)
    assert np.isfinite(out.label_logits).all()
