import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polysnake import diffcore as dc
from polysnake import losses
from polysnake.datagen import Instance, InstanceSample, build_ground_truth
from polysnake.diffcore import DiffArray, GradTape, grad_check
from polysnake.geometry import centroid, rasterize
from polysnake.model import init_params
from polysnake.pipeline import make_batch, stage1_loss, stage2_loss

from conftest import tiny_config


def sl1(d):
    d = abs(d)
    return 0.5 * d * d if d < 1 else d - 0.5


def focal_reference(Y, G, eps=1e-4):
    tot, npos = 0.0, 0
    for y, g in zip(np.clip(Y, eps, 1 - eps).ravel(), G.ravel()):
        if g == 1:
            npos += 1
            tot -= (1 - y) ** 2 * np.log(y)
        else:
            tot -= (1 - g) ** 4 * y ** 2 * np.log(1 - y)
    return tot / max(npos, 1)


def test_smooth_l1_examples():
    gt = np.zeros((8, 2))
    c = gt.copy()
    c[3, 0] = 0.5
    assert losses.contour_regression_loss(c, gt).value == pytest.approx(0.125)
    assert losses.contour_regression_loss(gt + [0.5, 0], gt).value == pytest.approx(8 * 0.125)
    c = gt.copy()
    c[0, 1] = 2.0
    assert losses.contour_regression_loss(c, gt).value == pytest.approx(1.5)
    assert losses.contour_regression_loss(gt, gt).value == 0
    with pytest.raises(ValueError):
        losses.contour_regression_loss(np.zeros((7, 2)), gt)


def test_regression_averages_instances(rng):
    a, b = rng.normal(size=(3, 10, 2)), rng.normal(size=(3, 10, 2))
    per = [losses.contour_regression_loss(a[i], b[i]).value for i in range(3)]
    assert losses.contour_regression_loss(a, b).value == pytest.approx(np.mean(per), rel=1e-6)


def test_shape_loss_brute_force(rng):
    with dc.precision(np.float64):
        C, G = rng.normal(size=(12, 2)) * 2, rng.normal(size=(12, 2)) * 2
        want = sum(sl1((C[(n + 1) % 12, j] - C[n, j]) - (G[(n + 1) % 12, j] - G[n, j]))
                   for n in range(12) for j in range(2))
        assert losses.shape_loss(C, G).value == pytest.approx(want, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**20), tx=st.floats(-50, 50), ty=st.floats(-50, 50))
def test_shape_loss_translation_invariant(seed, tx, ty):
    r = np.random.default_rng(seed)
    with dc.precision(np.float64):
        C, G = r.normal(size=(16, 2)), r.normal(size=(16, 2))
        base = losses.shape_loss(C, G).value
        t = np.array([tx, ty])
        tol = 64 * np.finfo(np.float64).eps * (1 + abs(t).max()) * 16
        assert abs(losses.shape_loss(C + t, G).value - base) <= tol
        assert abs(losses.shape_loss(C, G + t).value - base) <= tol
        assert losses.shape_loss(G + t, G).value <= tol


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**20), tx=st.integers(-400, 400), ty=st.integers(-400, 400))
def test_shape_loss_translation_exact_on_dyadic_grid(seed, tx, ty):
    # coordinates and shifts on a 1/8 grid make every difference exact
    r = np.random.default_rng(seed)
    with dc.precision(np.float64):
        C, G = r.integers(-200, 200, size=(16, 2)) / 8, r.integers(-200, 200, size=(16, 2)) / 8
        t = np.array([tx, ty]) / 8
        assert losses.shape_loss(C + t, G).value == losses.shape_loss(C, G).value
        assert losses.shape_loss(G + t, G).value == 0


def test_icd_loss_weights(rng):
    G = rng.normal(size=(2, 10, 2))
    cs = [G + rng.normal(size=G.shape) for _ in range(3)]
    terms = [losses.contour_regression_loss(c, G).value + 0.5 * losses.shape_loss(c, G).value for c in cs]
    got = losses.icd_loss(cs, G, lam=0.8, alpha=0.5).value
    assert got == pytest.approx(0.64 * terms[0] + 0.8 * terms[1] + terms[2], rel=1e-6)
    one = losses.icd_loss(cs[:1], G, 0.8, 1.0).value
    assert one == pytest.approx(losses.contour_regression_loss(cs[0], G).value + losses.shape_loss(cs[0], G).value, rel=1e-6)
    assert losses.icd_loss([G, G], G).value == 0
    with pytest.raises(ValueError):
        losses.icd_loss([], G)


def test_focal_perfect_center_is_zero():
    G = np.zeros((6, 6, 1))
    G[2, 3, 0] = 1
    Y = np.full_like(G, 1e-9)
    Y[2, 3, 0] = 1.0
    # center term vanishes; negatives only pay at the clamp floor
    assert losses.center_loss(Y, G).value == pytest.approx(focal_reference(Y, G), rel=1e-5)
    assert losses.center_loss(Y, G).value < 1e-6


def test_focal_diverges_to_clamp():
    G = np.zeros((4, 4, 1))
    G[1, 1, 0] = 1
    Y = np.full_like(G, 0.1)
    Y[1, 1, 0] = 1e-12
    assert losses.center_loss(Y, G).value == pytest.approx(focal_reference(Y, G), rel=1e-4)
    assert losses.center_loss(Y, G).value > 9


@pytest.mark.parametrize("npos", [0, 1, 3])
def test_focal_reference(npos, rng):
    G = rng.random((8, 8, 2)) * 0.9
    for i in range(npos):
        G[i * 2, i * 3, i % 2] = 1
    Y = rng.random((8, 8, 2)) * 0.98 + 0.01
    with dc.precision(np.float64):
        assert losses.center_loss(Y, G).value == pytest.approx(focal_reference(Y, G), rel=1e-10)


def test_bce_cases(rng):
    T = (rng.random((4, 4)) > 0.5).astype(float)
    assert losses.boundary_loss(np.clip(T, 1e-4, 1 - 1e-4), T).value == pytest.approx(1e-4, abs=2e-4)
    assert losses.boundary_loss(np.full((4, 4), 0.5), T).value == pytest.approx(np.log(2), rel=1e-6)
    B = rng.random((4, 4)) * 0.98 + 0.01
    want = -np.mean([t * np.log(b) + (1 - t) * np.log(1 - b) for b, t in zip(B.ravel(), T.ravel())])
    with dc.precision(np.float64):
        assert losses.boundary_loss(B, T).value == pytest.approx(want, rel=1e-10)


@pytest.mark.parametrize("name", ["focal", "bce", "smooth_l1", "shape"])
def test_loss_gradients(name, rng):
    G = np.zeros((6, 6, 2))
    G[2, 2, 0] = 1
    G[1, 1, 1] = 0.5
    T = (rng.random((6, 6)) > 0.5).astype(float)
    gt = rng.normal(size=(12, 2)) * 2
    fns = {
        "focal": (lambda y: losses.center_loss(y, G), rng.random((6, 6, 2)) * 0.9 + 0.05),
        "bce": (lambda y: losses.boundary_loss(y, T), rng.random((6, 6)) * 0.9 + 0.05),
        "smooth_l1": (lambda c: losses.contour_regression_loss(c, gt), gt + rng.normal(size=gt.shape)),
        "shape": (lambda c: losses.shape_loss(c, gt), gt + rng.normal(size=gt.shape)),
    }
    f, x = fns[name]
    assert grad_check(f, x) < 1e-4


def test_offset_loss(rng):
    S = np.zeros((1, 4, 4, 8))
    gt = np.zeros((1, 4, 2)) + [2, 1]
    assert losses.offset_loss(DiffArray(S), [0], [2], [1], gt).value == 0
    S[0, 1, 2, 0] = 0.5
    assert losses.offset_loss(DiffArray(S), [0], [2], [1], gt).value == pytest.approx(0.125)
    S = rng.normal(size=(2, 4, 4, 8))
    gts = rng.normal(size=(3, 4, 2))
    a = losses.offset_loss(DiffArray(S), [0, 1, 1], [0, 2, 3], [1, 1, 0], gts).value
    b = losses.offset_loss(DiffArray(S), [1, 0, 1], [3, 0, 2], [0, 1, 1], gts[[2, 0, 1]]).value
    assert a == pytest.approx(b, rel=1e-6)


def test_total_loss_stages():
    t = {k: DiffArray(v) for k, v in {"L_Y": 1.0, "L_S": 2.0, "L_B": 3.0, "L_ICD": 4.0, "L_MCR": 7.0}.items()}
    assert losses.total_loss("stage1", t).value == 10.0
    assert losses.total_loss("stage2", t).value == 7.0
    with pytest.raises(ValueError):
        losses.total_loss("stage3", t)


def toy_batch(size=32, n_vertices=16):
    t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    poly = np.stack([15 + 7 * np.cos(t), 17 + 5 * np.sin(t)], axis=1)
    img = np.zeros((size, size, 3), np.float32)
    m = rasterize(poly, size, size)
    img[m] = [0.9, 0.2, 0.1]
    img[~m] = [0.1, 0.4, 0.6]
    s = InstanceSample(img, [Instance(1, poly, centroid(poly), m)], 0, "ellipse")
    pk = build_ground_truth(s, n_vertices, 4, 4)
    return make_batch([s], [pk])


def test_stage1_terms_sum_and_nonnegative():
    cfg = tiny_config()
    rep, contours = stage1_loss(init_params(0, cfg), cfg, toy_batch())
    assert len(contours) == cfg.iterations
    parts = [rep.terms[k] for k in ("L_Y", "L_S", "L_B", "L_ICD")]
    assert all(v >= 0 for v in parts)
    assert rep.terms["total"] == pytest.approx(sum(parts), rel=1e-6)


def test_stage1_backbone_gradient_end_to_end():
    # full graph, including the path from S through C_0 into the deformation
    cfg = tiny_config(iterations=2, detach_initial=False)
    p = init_params(0, cfg)
    r = np.random.default_rng(0)
    p["icd.off1.w"].value = (r.normal(size=p["icd.off1.w"].shape) * 0.1).astype(np.float32)
    batch = toy_batch()
    name = "backbone.stem.b"
    w0 = p[name].value.copy()

    def f(w):
        p.tensors[name] = w
        return stage1_loss(p, cfg, batch)[0].total

    err = grad_check(f, w0)
    p.tensors[name] = DiffArray(w0, requires_grad=True)
    assert err < 1e-3


def test_stage2_touches_only_mcr():
    cfg = tiny_config()
    p = init_params(0, cfg)
    p.set_trainable(("backbone", "head", "icd", "mcr"))
    with GradTape() as tape:
        rep = stage2_loss(p, cfg, toy_batch())
    tape.backward(rep.total)
    for k, v in p.items():
        if k.startswith("mcr."):
            continue
        assert not v.grad.any(), k
    assert np.abs(p["mcr.fc.w"].grad).sum() > 0
