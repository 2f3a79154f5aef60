import numpy as np
import pytest

from eventfoley.conditioning import ModulationSpec, count_params
from eventfoley.nn import LSTM, MLP, ShapeError, grad_check, load_checkpoint, save_checkpoint
from eventfoley.unet import ModelConfig, UNet, describe, sinusoidal_embedding


def tiny(mode="bfilm", seed=0, **kw):
    base = dict(sample_len=64, channels=(4, 4), strides=(2, 2), kernel=3, bottleneck_hidden=3, class_count=2,
                class_embed_dim=3, sigma_embed_dim=4, embed_dim=5, cond_mode=mode, n_blocks=2, temporal_hidden=3,
                feature_window=16, feature_hop=8, identity_init=False, init_seed=seed)
    base.update(kw)
    return ModelConfig(**base)


def inputs(cfg, seed=0, bsz=2):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(bsz, cfg.sample_len)), rng.uniform(size=bsz), rng.integers(0, cfg.class_count, bsz),
            rng.uniform(size=(bsz, cfg.frames)))


def closed_form_count(cfg: ModelConfig) -> int:
    """Parameter count written out from the architecture, independent of the layer code."""
    k, e = cfg.kernel, cfg.embed_dim
    conv = lambda cin, cout, kk: cout * cin * kk + cout  # noqa: E731
    total = (cfg.class_count + 1) * cfg.class_embed_dim + cfg.frames
    d = cfg.sigma_embed_dim + cfg.class_embed_dim
    total += d * e + e + e * e + e
    c0 = cfg.channels[0]
    total += conv(1, c0, k)

    def temporal(c):
        if cfg.cond_mode == "none":
            return 0
        h = cfg.temporal_hidden
        if cfg.cond_mode == "film":
            return cfg.frames * h + h + h * 2 * c + 2 * c
        if cfg.cond_mode == "bfilm":
            return 1 * h + h + h * 2 * c + 2 * c
        return 4 * h * (1 + h) + 4 * h + h * 2 * c + 2 * c

    def residual(c, with_temporal):
        film = e * 2 * c + 2 * c
        return 2 * conv(c, c, k) + film + (temporal(c) if with_temporal else 0)

    every = cfg.temporal_placement == "every_block"
    cin = c0
    for c, s in zip(cfg.channels, cfg.strides):
        total += conv(cin, c, s + 2 * (s // 2)) + residual(c, every)
        cin = c
    cl, hb = cfg.channels[-1], cfg.bottleneck_hidden
    total += 2 * (4 * hb * (cl + hb) + 4 * hb) + 2 * hb * cl + cl
    for i in range(cfg.levels - 1, -1, -1):
        cout = cfg.channels[i - 1] if i > 0 else c0
        s = cfg.strides[i]
        # transposed weights are [Cin, Cout, K] with one bias per output channel
        total += 2 * cfg.channels[i] * cout * (s + 2 * (s // 2)) + cout + residual(cout, True)
    total += conv(2 * c0, 1, k)
    return total


MODES = ("none", "film", "tfilm", "bfilm")


@pytest.mark.parametrize("seed", range(20))
def test_full_model_gradients(seed):
    mode = MODES[seed % 4]
    placement = "latter_levels" if seed >= 16 else "every_block"
    model = UNet(tiny(mode, seed, temporal_placement=placement), dtype=np.float64)
    x, t, cls, feat = inputs(model.cfg, seed)
    # a constant null feature ties every max-pool block, where finite differences see a kink
    model.store["null_feature"][...] = np.random.default_rng(seed).uniform(size=model.cfg.frames)
    cls = np.array([cls[0], -1])
    drop = np.array([False, seed % 2 == 1])
    w = np.random.default_rng(100 + seed).normal(size=x.shape)

    def loss():
        return float(np.sum(np.tanh(model.forward(x, t, cls, feat, drop)) * w))

    y = model.forward(x, t, cls, feat, drop)
    model.store.zero_grad()
    model.backward((1 - np.tanh(y) ** 2) * w)
    err = grad_check(loss, model.store.params, model.store.grads, max_entries=3, rng=np.random.default_rng(seed))
    assert err < 1e-4


def test_null_feature_gradient_only_from_dropped_rows():
    model = UNet(tiny("bfilm"), dtype=np.float64)
    x, t, cls, feat = inputs(model.cfg)
    model.forward(x, t, cls, feat, np.array([False, False]))
    model.store.zero_grad()
    model.backward(np.ones_like(x))
    assert np.all(model.store.grads["null_feature"] == 0)
    model.forward(x, t, cls, feat, np.array([True, False]))
    model.store.zero_grad()
    model.backward(np.ones_like(x))
    assert np.any(model.store.grads["null_feature"] != 0)


def test_zero_initialised_head_predicts_zero():
    model = UNet(ModelConfig(channels=(4, 8), strides=(4, 4), bottleneck_hidden=4))
    x, t, cls, feat = inputs(model.cfg)
    assert np.all(model.forward(x, t, cls, feat) == 0)


@pytest.mark.parametrize("length, strides", [(8000, (2, 2, 2, 2)), (88200, (2, 2, 2))])
def test_shape_preserved(length, strides):
    cfg = ModelConfig(sample_len=length, channels=(2,) * len(strides), strides=strides, bottleneck_hidden=2,
                      n_blocks=4, temporal_hidden=2, identity_init=False)
    model = UNet(cfg)
    x, t, cls, feat = inputs(cfg, bsz=1)
    assert model.forward(x, t, cls, feat).shape == (1, length)


def test_level_length_trace():
    assert ModelConfig().level_lengths == [8000, 4000, 2000, 1000, 500]


def test_config_invariants():
    with pytest.raises(ValueError, match="divide"):
        ModelConfig(sample_len=8001)
    with pytest.raises(ValueError):
        ModelConfig(class_count=0)
    with pytest.raises(ValueError):
        ModelConfig(n_blocks=0)
    with pytest.raises(ValueError):
        ModelConfig(n_blocks=64)  # more blocks than the 59 feature frames


def test_config_text_round_trip():
    cfg = tiny("tfilm", 3, temporal_placement="latter_levels")
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_input_validation():
    model = UNet(tiny())
    x, t, cls, feat = inputs(model.cfg)
    with pytest.raises(ShapeError):
        model.forward(x[:, :-1], t, cls, feat)
    with pytest.raises(ValueError):
        model.forward(x, t, np.array([0, 2]), feat)
    with pytest.raises(ShapeError):
        model.forward(x, t, cls, feat[:, :-1])


def test_bottleneck_identity_under_zero_projection():
    model = UNet(tiny())
    model.store["bottleneck.proj.weight"][...] = 0
    model.store["bottleneck.proj.bias"][...] = 0
    h = np.random.default_rng(0).normal(size=(2, 16, 4)).astype(np.float32)
    out = model.bottleneck(h)
    assert out.shape == h.shape and np.array_equal(out, h)


def test_bottleneck_matches_scalar_lstm_unroll():
    model = UNet(tiny(), dtype=np.float64)
    s = model.store
    h = np.random.default_rng(1).normal(size=(1, 3, 4))

    def unroll(prefix, seq):
        wx, wh, b = s[f"{prefix}.wx"], s[f"{prefix}.wh"], s[f"{prefix}.bias"]
        hid = wh.shape[0]
        hs, c, out = np.zeros(hid), np.zeros(hid), []
        for v in seq:
            z = v @ wx + hs @ wh + b
            sig = lambda q: 1 / (1 + np.exp(-q))  # noqa: E731
            i, f, g, o = sig(z[:hid]), sig(z[hid:2 * hid]), np.tanh(z[2 * hid:3 * hid]), sig(z[3 * hid:])
            c = f * c + i * g
            hs = o * np.tanh(c)
            out.append(hs)
        return np.array(out)

    fwd = unroll("bottleneck.lstm.fwd", h[0])
    bwd = unroll("bottleneck.lstm.bwd", h[0][::-1])[::-1]
    both = np.concatenate([fwd, bwd], axis=1)
    expected = h[0] + both @ s["bottleneck.proj.weight"] + s["bottleneck.proj.bias"]
    np.testing.assert_allclose(model.bottleneck(h)[0], expected, rtol=0, atol=1e-10)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("placement", ["every_block", "latter_levels"])
def test_param_count_closed_form(mode, placement):
    for cfg in (tiny(mode, temporal_placement=placement), ModelConfig(cond_mode=mode, temporal_placement=placement)):
        model = UNet(cfg)
        assert model.param_count() == closed_form_count(cfg)
        assert sum(model.count_by_module().values()) == model.param_count()


def test_param_count_directions():
    counts = {m: describe(ModelConfig(cond_mode=m))[1] for m in MODES}
    assert counts["bfilm"] < counts["tfilm"]
    assert counts["none"] < counts["film"]
    assert counts["none"] < counts["bfilm"]
    assert max(counts.values()) < 1_000_000
    text, total = describe(ModelConfig())
    assert f"{total:,d}" in text and describe(ModelConfig())[0] == text


def test_temporal_modulation_counts_match_conditioning_module():
    cfg = ModelConfig(cond_mode="bfilm")
    model = UNet(cfg)
    expected = sum(count_params(ModulationSpec("bfilm", 1, c, (cfg.temporal_hidden,)))
                   for c in list(cfg.channels) + [cfg.channels[0]] + list(cfg.channels[:-1]))
    tmod = sum(p.size for n, p in model.store.params.items() if ".tmod." in n)
    assert tmod == expected
    assert LSTM.count(1, 16) > MLP.count([1, 16])


def test_cond_mode_none_ignores_feature_and_bfilm_does_not():
    x, t, cls, feat = inputs(tiny())
    other = np.random.default_rng(9).uniform(size=feat.shape)
    for mode, should_change in (("none", False), ("bfilm", True), ("tfilm", True), ("film", True)):
        model = UNet(tiny(mode), dtype=np.float64)
        changed = not np.array_equal(model.forward(x, t, cls, feat), model.forward(x, t, cls, other))
        assert changed == should_change, mode


def test_bypass_temporal_equals_identity_modulation():
    model = UNet(tiny("bfilm"), dtype=np.float64)
    x, t, cls, feat = inputs(model.cfg)
    bypassed = model.forward(x, t, cls, feat, bypass_temporal=True)
    for name in model.store:
        if ".tmod.mlp.1." in name:
            model.store[name][...] = 0
            if name.endswith("bias"):
                c = model.store[name].size // 2
                model.store[name][:c] = 1
    np.testing.assert_allclose(model.forward(x, t, cls, feat), bypassed, rtol=0, atol=1e-12)


def test_dropped_rows_use_both_null_conditions():
    model = UNet(tiny("bfilm"), dtype=np.float64)
    x, t, cls, feat = inputs(model.cfg)
    mixed = model.forward(x, t, cls, feat, drop=np.array([True, False]))
    null = model.forward(x, t, None, None)
    cond = model.forward(x, t, cls, feat)
    np.testing.assert_array_equal(mixed[0], null[0])
    np.testing.assert_array_equal(mixed[1], cond[1])
    # dropping only one of the two would give something else
    assert not np.array_equal(model.forward(x, t, None, feat)[0], null[0])
    assert not np.array_equal(model.forward(x, t, cls, None)[0], null[0])


def test_linear_debug_config_is_homogeneous():
    """Linear activations, zero biases and zero beta heads leave a map that is linear in x."""
    model = UNet(tiny("bfilm", activation="linear"), dtype=np.float64)
    for name in model.store:
        p = model.store[name]
        if name.endswith("bias"):
            p[...] = 0
            if name.endswith("film.mlp.0.bias") or name.endswith("tmod.mlp.1.bias"):
                p[: p.size // 2] = 1  # keep gamma at one
        if name.endswith("film.mlp.0.weight") or name.endswith("tmod.mlp.1.weight"):
            p[:, p.shape[1] // 2:] = 0  # beta head
        if name.startswith("bottleneck.proj"):
            p[...] = 0  # the LSTM is the one nonlinear path left
    x, t, cls, feat = inputs(model.cfg)
    assert np.all(model.forward(np.zeros_like(x), t, cls, feat) == 0)
    np.testing.assert_allclose(model.forward(2 * x, t, cls, feat), 2 * model.forward(x, t, cls, feat),
                               rtol=1e-12, atol=1e-12)


def test_sinusoidal_embedding_smooth_and_deterministic():
    t = np.linspace(0, 1, 1001)
    e = sinusoidal_embedding(t, 16)
    assert e.shape == (1001, 16) and np.array_equal(e, sinusoidal_embedding(t, 16))
    assert np.max(np.abs(np.diff(e, axis=0))) < 0.9  # bounded steps on a 1e-3 grid


def test_checkpoint_round_trip_reproduces_outputs(tmp_path):
    cfg = tiny("tfilm", 4)
    model = UNet(cfg)
    x, t, cls, feat = inputs(cfg)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model.store, path)
    other = UNet(cfg.replace(init_seed=99))
    load_checkpoint(other.store, path)
    assert model.forward(x, t, cls, feat).tobytes() == other.forward(x, t, cls, feat).tobytes()
    with pytest.raises((KeyError, ValueError, ShapeError)):
        load_checkpoint(UNet(tiny("bfilm")).store, path)


def test_forward_deterministic():
    a = UNet(tiny("bfilm", 2))
    b = UNet(tiny("bfilm", 2))
    x, t, cls, feat = inputs(a.cfg)
    assert a.forward(x, t, cls, feat).tobytes() == b.forward(x, t, cls, feat).tobytes()
