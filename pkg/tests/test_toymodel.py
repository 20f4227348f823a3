import numpy as np
import pytest

from sinklab.errors import ConfigError, DomainError
from sinklab.intervene import ProbeRecorder
from sinklab.toymodel import (ModelConfig, Prompt, build_model, encode_prompt, forward_denoise,
                              normalized_time)


def prompt_for(cfg, pid=0):
    return Prompt(pid, tuple((7 * i + pid) % cfg.vocab for i in range(cfg.n_txt)))


class Recorder:
    def __init__(self):
        self.steps, self.sites = [], []

    def begin_step(self, step, t_norm):
        self.steps.append((step, t_norm))

    def attend(self, site, logits, values):
        self.sites.append((site.layer, site.step, logits.shape, values.shape))
        return logits, values

    def observe(self, site, probs, block_output):
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_default_config_shape():
    cfg = ModelConfig()
    assert (cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.n_img, cfg.n_txt, cfg.n_steps) == (8, 4, 64, 64, 16, 20)
    assert cfg.seq_len == 80 and cfg.middle_layer == 4 and cfg.head_dim == 16


@pytest.mark.parametrize("kw", [dict(n_layers=0), dict(d_model=10, n_heads=4), dict(n_img=15),
                                dict(step_rule="bogus"), dict(cond_strength=float("inf"))])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_config_round_trip():
    cfg = ModelConfig(n_layers=3, cond_strength=1.5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"n_layers": 2, "depth": 3})


def test_normalized_time():
    assert normalized_time(0, 20) == 0.0
    assert normalized_time(19, 20) == 0.95
    with pytest.raises(DomainError):
        normalized_time(20, 20)


def test_weights_deterministic(small_config):
    a, b = build_model(small_config), build_model(small_config)
    for name in a.weights:
        assert np.array_equal(a.weights[name], b.weights[name])
    other = build_model(ModelConfig(**{**small_config.to_dict(), "init_seed": 4}))
    assert not np.array_equal(a.weights["layer0.wq"], other.weights["layer0.wq"])


def test_weight_bounds(small_model):
    d = small_model.config.d_model
    assert np.abs(small_model.layer(0, "wq")).max() <= 1 / np.sqrt(d)


def test_encode_prompt_validates(small_model):
    cfg = small_model.config
    assert encode_prompt(small_model, prompt_for(cfg)).shape == (cfg.n_txt, cfg.d_model)
    with pytest.raises(DomainError):
        encode_prompt(small_model, Prompt(0, (1, 2)))
    with pytest.raises(DomainError):
        encode_prompt(small_model, Prompt(0, (cfg.vocab,) * cfg.n_txt))


def test_generation_deterministic_and_seed_sensitive(small_model):
    p = prompt_for(small_model.config)
    a = forward_denoise(small_model, p, 5)
    b = forward_denoise(small_model, p, 5)
    c = forward_denoise(small_model, p, 6)
    assert np.array_equal(a.image, b.image)
    assert not np.array_equal(a.image, c.image)
    side = small_model.config.image_size
    assert a.image.shape == (side, side, 3)
    assert a.image.min() >= 0 and a.image.max() <= 1


def test_prompt_changes_output(small_model):
    cfg = small_model.config
    a = forward_denoise(small_model, prompt_for(cfg, 0), 5)
    b = forward_denoise(small_model, prompt_for(cfg, 1), 5)
    assert not np.array_equal(a.image, b.image)


def test_processor_sees_every_site(small_model):
    cfg = small_model.config
    rec = Recorder()
    forward_denoise(small_model, prompt_for(cfg), 1, rec)
    assert [s for s, _ in rec.steps] == list(range(cfg.n_steps))
    assert len(rec.sites) == cfg.n_layers * cfg.n_steps
    N = cfg.seq_len
    assert rec.sites[0][2:] == ((cfg.n_heads, N, N), (cfg.n_heads, N, cfg.head_dim))


def test_identity_processor_is_bit_exact(small_model):
    p = prompt_for(small_model.config)
    bare = forward_denoise(small_model, p, 3)
    probed = forward_denoise(small_model, p, 3, ProbeRecorder(small_model.config.n_img))
    assert np.array_equal(bare.image, probed.image)
    assert np.array_equal(bare.pooled_features, probed.pooled_features)


def test_trajectory_length(small_model):
    out = forward_denoise(small_model, prompt_for(small_model.config), 0, keep_trajectory=True)
    assert len(out.per_step_latents) == small_model.config.n_steps + 1


def test_residual_half_halves_steps(small_config):
    cfg = ModelConfig(**{**small_config.to_dict(), "step_rule": "residual_half"})
    rec = Recorder()
    forward_denoise(build_model(cfg), prompt_for(cfg), 0, rec)
    assert len(rec.steps) == cfg.n_steps // 2
