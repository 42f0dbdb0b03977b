import dataclasses
import math

import numpy as np
import pytest

from predrisk import autodiff as ad
from predrisk.errors import InvalidParameter, ShapeError
from predrisk.model import (
    AblationConfig,
    Batch,
    ModelConfig,
    Predictor,
    all_channel_sets,
    all_feature_sets,
    baseline_predict,
)
from predrisk.optim import grad_check
from predrisk.scene import OV_CELL, SV_SLOTS
from predrisk.synthetic import kinematic_sample
from predrisk.training import nll_loss


@pytest.fixture(scope="module")
def batch(samples32):
    return Batch.from_samples(samples32[:4])


def test_forward_shapes(toy_config, batch):
    fwd = Predictor(toy_config).forward(batch)
    assert fwd.mu.shape == (4, 25, 2)
    assert fwd.sigma.shape == (4, 25, 2)
    assert fwd.rho.shape == (4, 25)
    assert np.all(fwd.sigma.data > 0)
    assert np.all(np.abs(fwd.rho.data) < 1)
    assert fwd.context.shape == (4, toy_config.ch1_dim + 2 * toy_config.conv2_filters + toy_config.gat_dim)


def test_default_dimensions(batch):
    p = Predictor()
    fwd = p.forward(batch.subset([0]))
    assert p.params["ov_enc.W_hh"].shape == (64, 256)
    assert p.params["dec.W_hh"].shape == (128, 512)
    assert p.params["conv1.W"].shape == (64, 64, 2, 2)
    assert p.params["conv2.W"].shape == (16, 64, 1, 2)
    assert fwd.context.shape == (1, 32 + 32 + 64)


def test_init_is_seeded_and_bounded(toy_config):
    a, b = Predictor(toy_config), Predictor(toy_config)
    c = Predictor(dataclasses.replace(toy_config, seed=1))
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)
    w = a.params["ov_enc.W_ih"].data
    assert np.all(np.abs(w) <= math.sqrt(6 / (w.shape[0] + w.shape[1])))


def test_social_tensor_placement(toy_config):
    p = Predictor(toy_config)
    H = toy_config.encoder_hidden
    h_ov = np.full((1, H), -1.0)
    h_sv = np.arange(1, 12, dtype=float)[None, :, None] * np.ones((1, 11, H))
    mask = np.ones((1, 11), bool)
    mask[0, 4] = False
    grid = p.assemble_social_tensor(h_ov, h_sv, mask).data
    assert grid.shape == (1, H, 4, 3)
    assert np.all(grid[0, :, OV_CELL[0], OV_CELL[1]] == -1.0)
    for k, (r, c) in enumerate(SV_SLOTS):
        expected = 0.0 if k == 4 else k + 1
        assert np.all(grid[0, :, r, c] == expected)


def test_pooled_social_size(toy_config):
    p = Predictor(toy_config)
    social = np.random.default_rng(0).normal(size=(2, toy_config.encoder_hidden, 4, 3))
    assert p.conv_social_pool(social).shape == (2, 2 * toy_config.conv2_filters)
    with pytest.raises(ShapeError):
        p.conv_social_pool(social[:, :, :3])


def test_attention_ignores_empty_slots(toy_config):
    p = Predictor(toy_config)
    rng = np.random.default_rng(0)
    h_ov = rng.normal(size=(1, toy_config.encoder_hidden))
    h_sv = rng.normal(size=(1, 11, toy_config.encoder_hidden))
    mask = np.zeros((1, 11), bool)
    mask[0, [1, 5, 9]] = True
    out, alpha, _ = p.graph_attention(h_ov, h_sv, mask)
    assert alpha.data.sum() == pytest.approx(1.0)
    assert np.all(alpha.data[~mask] == 0)
    h_sv2 = h_sv.copy()
    h_sv2[0, 0] += 100.0
    out2, _, _ = p.graph_attention(h_ov, h_sv2, mask)
    assert np.array_equal(out.data, out2.data)


def test_no_neighbours_gives_zero_attention_context(toy_config):
    p = Predictor(toy_config)
    out, alpha, _ = p.graph_attention(np.ones((1, 4)), np.ones((1, 11, 4)), np.zeros((1, 11), bool))
    assert np.all(alpha.data == 0) and np.all(out.data == 0)


def test_absent_neighbour_features_do_not_matter(toy_config, batch):
    p = Predictor(toy_config)
    noisy = dataclasses.replace(batch, sv=np.where(batch.mask[..., None, None], batch.sv, 1e3))
    assert np.array_equal(p.forward(batch).mu.data, p.forward(noisy).mu.data)


def test_ablations_build_and_run(toy_config, batch):
    counts = {}
    for abl in all_channel_sets() + all_feature_sets():
        p = Predictor(toy_config, abl)
        assert p.forward(batch).mu.shape == (4, 25, 2)
        counts[(abl.channels, abl.feature_set)] = p.n_parameters()
    assert counts[((1,), "pos+vel+acc/abs+rel")] < counts[((1, 2, 3), "pos+vel+acc/abs+rel")]
    assert counts[((1, 2, 3), "pos/abs")] < counts[((1, 2, 3), "pos+vel+acc/abs+rel")]
    p = Predictor(toy_config, AblationConfig(channels=(1,)))
    assert not any(k.startswith(("sv", "conv", "gat")) for k in p.params)


def test_feature_columns():
    assert AblationConfig(positions="pos", motion="abs").sv_columns() == [0, 1]
    assert AblationConfig(positions="pos+vel", motion="abs+rel").sv_columns() == [0, 1, 2, 3, 6, 7, 8, 9]


def test_ablation_validation():
    with pytest.raises(InvalidParameter):
        AblationConfig(channels=(2, 3))
    with pytest.raises(InvalidParameter):
        AblationConfig(positions="vel")


def test_fingerprints_differ():
    fps = {Predictor(ModelConfig(encoder_hidden=4, decoder_hidden=4), a).fingerprint()
           for a in all_channel_sets() + all_feature_sets()}
    assert len(fps) == 9  # the default appears in both lists


def test_per_slot_encoders(toy_config, batch):
    p = Predictor(dataclasses.replace(toy_config, sv_weights="per_slot"))
    assert "sv10_enc.W_hh" in p.params and "sv_enc.W_hh" not in p.params
    assert p.forward(batch).mu.shape == (4, 25, 2)


def test_model_config_validation():
    with pytest.raises(InvalidParameter):
        ModelConfig(future_len=20)
    with pytest.raises(InvalidParameter):
        ModelConfig(encoder_hidden=0)
    with pytest.raises(InvalidParameter):
        ModelConfig(output_anchor="lane")


def test_load_state_dict_checks(toy_config):
    p = Predictor(toy_config)
    state = p.state_dict()
    state["out.W"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        p.load_state_dict(state)
    with pytest.raises(InvalidParameter):
        p.load_state_dict({})


def test_cv_anchor_adds_velocity_extrapolation(toy_config):
    s = kinematic_sample(v=(20.0, 1.0))
    b = Batch.from_samples([s])
    base = Predictor(toy_config).anchor(b)
    cv = Predictor(dataclasses.replace(toy_config, output_anchor="cv")).anchor(b)
    assert np.allclose(cv - base, np.outer(0.2 * np.arange(1, 26), [20.0, 1.0]))
    assert np.allclose(cv[0], baseline_predict(s, "cv"))


def test_sigma_init(toy_config, batch):
    p = Predictor(dataclasses.replace(toy_config, sigma_init=0.1))
    sig = p.forward(batch).sigma.data
    assert 0.01 < np.median(sig) < 1.0


def full_model_gradcheck(config, abl, samples, loss="nll"):
    p = Predictor(config, abl)
    b = Batch.from_samples(samples)

    def fn():
        fwd = p.forward(b)
        if loss == "nll":
            return nll_loss(fwd.mu, b.future, fwd.sigma, fwd.rho)
        return ad.mean((fwd.mu - b.future) * (fwd.mu - b.future))

    return grad_check(fn, p.parameters(), n_coords=200)


@pytest.mark.parametrize("channels", [(1,), (1, 2), (1, 3), (1, 2, 3)])
def test_full_model_gradients(channels, toy_config, samples32):
    cfg = dataclasses.replace(toy_config, pos_scale=100.0, vel_scale=30.0)
    err = full_model_gradcheck(cfg, AblationConfig(channels=channels), samples32[:2])
    assert err < 1e-4


def test_cv_baseline_on_constant_velocity():
    s = kinematic_sample(v=(25.0, 0.5))
    assert np.max(np.abs(baseline_predict(s, "cv") - s.ov_future)) < 1e-9


def test_ca_baseline_on_constant_acceleration():
    s = kinematic_sample(v=(25.0, 0.0), a=(1.0, -0.1))
    assert np.max(np.abs(baseline_predict(s, "ca") - s.ov_future)) < 1e-9
    with pytest.raises(InvalidParameter):
        baseline_predict(s, "lstm")
