import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polysnake import diffcore as dc
from polysnake import icd
from polysnake.diffcore import DiffArray, GradTape, grad_check
from polysnake.model import init_params

from conftest import tiny_config


def randomize(params, names, seed=0, scale=0.3):
    r = np.random.default_rng(seed)
    for n in names:
        params[n].value = (r.normal(size=params[n].shape) * scale).astype(params[n].value.dtype)


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def gru_reference(g, h, p):
    """Direct per-vertex evaluation of the gated update (scalar loops)."""
    N, Dv = h.shape

    def conv(x, name):
        w, b = p[f"icd.gru_{name}.w"].value.astype(float), p[f"icd.gru_{name}.b"].value.astype(float)
        cout, cin, ks = w.shape
        half = ks // 2
        out = np.zeros((N, cout))
        for n in range(N):
            for o in range(cout):
                acc = b[o]
                for t in range(-half, half + 1):
                    for c in range(cin):
                        acc += w[o, c, t + half] * x[(n + t) % N, c]
                out[n, o] = acc
        return out

    hg = np.concatenate([h, g], axis=1)
    z = sigmoid(conv(hg, "z"))
    r = sigmoid(conv(hg, "r"))
    cand = np.tanh(conv(np.concatenate([r * h, g], axis=1), "h"))
    out = np.zeros_like(h)
    for n in range(N):
        for d in range(Dv):
            out[n, d] = (1 - z[n, d]) * h[n, d] + z[n, d] * cand[n, d]
    return out


@pytest.fixture
def small():
    cfg = tiny_config(n_vertices=6, feat_dim=2, icd_fusion=(4, 2), gru_kernel=3)
    p = init_params(3, cfg)
    randomize(p, [k for k in p if k.startswith("icd.gru")], seed=1, scale=0.5)
    return cfg, p


def test_gru_matches_reference(small, rng):
    cfg, p = small
    g, h = rng.normal(size=(6, 4)), np.tanh(rng.normal(size=(6, 4)))
    with dc.precision(np.float64):
        out = icd.gru_update(DiffArray(g), DiffArray(h), p).value
    np.testing.assert_allclose(out, gru_reference(g, h, p), rtol=1e-10, atol=1e-12)


def test_gru_closed_and_open_gate(small, rng):
    cfg, p = small
    g, h = DiffArray(rng.normal(size=(6, 4))), DiffArray(np.tanh(rng.normal(size=(6, 4))))
    p["icd.gru_z.b"].value[:] = -1e4
    np.testing.assert_array_equal(icd.gru_update(g, h, p).value, h.value)
    p["icd.gru_z.b"].value[:] = 1e4
    hg = dc.concat([dc.mul(dc.sigmoid(dc.circular_conv1d(dc.concat([h, g]), p["icd.gru_r.w"], p["icd.gru_r.b"])), h), g])
    cand = dc.tanh(dc.circular_conv1d(hg, p["icd.gru_h.w"], p["icd.gru_h.b"]))
    np.testing.assert_allclose(icd.gru_update(g, h, p).value, cand.value, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20), steps=st.integers(1, 6))
def test_hidden_state_stays_in_open_interval(seed, steps):
    cfg = tiny_config(n_vertices=10, feat_dim=4, icd_fusion=(4,))
    p = init_params(seed, cfg)
    randomize(p, [k for k in p if k.startswith("icd.gru")], seed=seed, scale=0.4)
    r = np.random.default_rng(seed)
    with dc.precision(np.float64):
        h = DiffArray(r.uniform(-0.999, 0.999, size=(10, 6)))
        for _ in range(steps):
            h = icd.gru_update(DiffArray(r.normal(size=(10, 6))), h, p)
            assert np.all(np.abs(h.value) < 1)


def test_predict_offsets_zero_init_and_shape(params, rng):
    h = DiffArray(rng.normal(size=(3, 16, 10)))
    off = icd.predict_offsets(h, params)
    assert off.shape == (3, 16, 2) and not off.value.any()


def test_predict_offsets_gradient(cfg, rng):
    p = init_params(0, cfg)
    randomize(p, ["icd.off1.w", "icd.off1.b"])
    assert grad_check(lambda h: dc.sum(icd.predict_offsets(h, p)), rng.normal(size=(16, 10))) < 1e-4


def test_gru_gradient(small, rng):
    cfg, p = small
    g = rng.normal(size=(6, 4))
    assert grad_check(lambda h: dc.sum(icd.gru_update(DiffArray(g), h, p)), np.tanh(rng.normal(size=(6, 4)))) < 1e-4


def feature_map(cfg, rng, B=1, h=12, w=12):
    return DiffArray(rng.normal(size=(B, h, w, cfg.feat_dim)))


def ring(n, cx=6.0, cy=5.0, r=3.0):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


def test_aggregate_shapes_and_coords(cfg, params, rng):
    c = ring(16)
    with dc.precision(np.float64):
        g = icd.aggregate_contour_features(feature_map(cfg, rng, w=10), c, params, cfg)
    assert g.shape == (16, cfg.contour_dim)
    np.testing.assert_array_equal(g.value[:, -2:], c * [1 / 10, 1 / 12])


def test_constant_field_sampling(cfg):
    F = DiffArray(np.full((1, 12, 12, cfg.feat_dim), 2.5))
    f = dc.bilinear_sample_points(F, DiffArray(ring(16)[None] * 1.3), np.zeros((1, 1), int))
    assert np.all(f.value == 2.5)


def test_aggregate_cyclic_equivariance(cfg, params, rng):
    F = feature_map(cfg, rng)
    c = ring(16)
    g = icd.aggregate_contour_features(F, c, params, cfg).value
    gs = icd.aggregate_contour_features(F, np.roll(c, 5, axis=0), params, cfg).value
    np.testing.assert_allclose(gs, np.roll(g, 5, axis=0), rtol=1e-6, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**20), s=st.integers(1, 15))
def test_icd_step_cyclic_equivariance(seed, s):
    cfg = tiny_config()
    p = init_params(seed, cfg)
    randomize(p, ["icd.off1.w", "icd.off1.b"], seed=seed)
    r = np.random.default_rng(seed)
    with dc.precision(np.float64):
        F = DiffArray(r.normal(size=(1, 12, 12, cfg.feat_dim)))
        c = ring(16) + r.normal(scale=0.3, size=(16, 2))
        h = np.tanh(r.normal(size=(1, 16, cfg.contour_dim)))
        st0 = icd.ContourState(DiffArray(c[None]), DiffArray(h), 0)
        st1 = icd.ContourState(DiffArray(np.roll(c, s, axis=0)[None]), DiffArray(np.roll(h, s, axis=1)), 0)
        a, _ = icd.step(F, st0, p, cfg)
        b, _ = icd.step(F, st1, p, cfg)
    np.testing.assert_allclose(b.contour.value, np.roll(a.contour.value, s, axis=1), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.hidden.value, np.roll(a.hidden.value, s, axis=1), rtol=1e-12, atol=1e-12)


def test_deform_k0_and_fixpoint(cfg, params, rng):
    F = feature_map(cfg, rng, B=2)
    c0 = np.stack([ring(16), ring(16, 4, 7, 2)])
    out, state = icd.deform(F, c0, 0, params, cfg, [0, 1])
    assert out == [] and np.array_equal(state.contour.value, c0.astype(np.float32))
    out, _ = icd.deform(F, c0, 4, params, cfg, [0, 1])
    assert len(out) == 4 and all(np.array_equal(c.value, c0.astype(np.float32)) for c in out)


def test_deform_residual_updates(cfg, rng):
    p = init_params(0, cfg)
    randomize(p, ["icd.off1.w", "icd.off1.b"])
    F = feature_map(cfg, rng)
    c0 = ring(16)[None]
    out, _ = icd.deform(F, c0, 3, p, cfg)
    assert not np.allclose(out[0].value, c0)
    assert not np.allclose(out[2].value, out[1].value)


def test_backprop_through_time(cfg, rng):
    p = init_params(0, cfg)
    randomize(p, ["icd.off1.w", "icd.off1.b"])
    F = feature_map(cfg, rng)
    with GradTape() as tape:
        out, _ = icd.deform(F, ring(16)[None], 2, p, cfg)
        loss = dc.sum(dc.mul(out[1], out[1]))
    tape.backward(loss)
    assert np.abs(p["icd.circ0.w"].grad).sum() > 0
    assert np.abs(p["icd.gru_z.w"].grad).sum() > 0
