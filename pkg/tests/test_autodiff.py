"""Finite-difference oracles for every reverse-mode primitive."""

import numpy as np
import pytest
from scipy import special

from bevmap import autodiff as ad
from bevmap.errors import ContractViolation

from helpers import fd_gradcheck, rel_err

TOL = 1e-6  # float64 central differences are good to ~1e-8 here


def _rng(tag):
    return np.random.default_rng(tag)


# ---------------------------------------------------------------- arithmetic


def test_add_mul_known_values():
    a = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = ad.Tensor(np.array([3.0, 4.0]), requires_grad=True)
    with ad.tape() as t:
        out = ad.sum_(ad.mul(ad.add(a, b), b))
    assert out.data == pytest.approx(4.0 * 3.0 + 6.0 * 4.0)
    t.backward(out)
    np.testing.assert_allclose(a.grad, [3.0, 4.0])
    np.testing.assert_allclose(b.grad, [1.0 + 3.0 + 3.0, 2.0 + 4.0 + 4.0])


def test_elementwise_binary_grads():
    rng = _rng(100)
    for i in range(30):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        x = rng.standard_normal(shape)
        y = rng.standard_normal(shape) + 2.5  # keep away from 0
        for fn in (
            lambda a, b: ad.sum_(ad.add(a, b)),
            lambda a, b: ad.sum_(ad.sub(a, b)),
            lambda a, b: ad.sum_(ad.mul(a, b)),
            lambda a, b: ad.mean_(ad.mul(ad.add(a, b), ad.sub(a, b))),
        ):
            assert fd_gradcheck(fn, [x, y]) < TOL


def test_broadcasting_grads():
    rng = _rng(101)
    cases = [((4, 3), (3,)), ((2, 5, 3), (1, 3)), ((6, 1), (6, 4)),
             ((3, 4), ()), ((1,), (5, 1))]
    for sa, sb in cases:
        for i in range(8):
            a = rng.standard_normal(sa)
            b = rng.standard_normal(sb)
            assert fd_gradcheck(
                lambda x, y: ad.sum_(ad.mul(x, y)), [a, b]) < TOL
            assert fd_gradcheck(
                lambda x, y: ad.sum_(ad.add(ad.mul(x, x), y)), [a, b]) < TOL


def test_unary_grads():
    rng = _rng(102)
    ops = [
        (ad.neg, lambda r, s: r.standard_normal(s)),
        (ad.exp, lambda r, s: r.standard_normal(s)),
        (ad.log, lambda r, s: r.uniform(0.5, 3.0, s)),
        (ad.sqrt_, lambda r, s: r.uniform(0.5, 3.0, s)),
        (ad.reciprocal, lambda r, s: r.uniform(0.5, 3.0, s)),
        (ad.relu, lambda r, s: r.standard_normal(s) + 0.7),
        (ad.gelu, lambda r, s: r.standard_normal(s)),
        (ad.sigmoid, lambda r, s: r.standard_normal(s)),
        (ad.abs_, lambda r, s: r.standard_normal(s) + 1.2),
    ]
    for op, sample in ops:
        for i in range(25):
            shape = tuple(rng.integers(1, 5, size=2))
            x = sample(rng, shape)
            assert fd_gradcheck(lambda t: ad.sum_(op(t)), [x]) < TOL, op


def test_gelu_matches_erf_definition():
    rng = _rng(103)
    x = rng.standard_normal(50)
    with ad.no_grad():
        got = ad.gelu(ad.Tensor(x)).data
    want = 0.5 * x * (1.0 + special.erf(x / np.sqrt(2.0)))
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_matmul_grads():
    rng = _rng(104)
    for i in range(25):
        m, k, n = rng.integers(1, 5, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        assert fd_gradcheck(
            lambda x, y: ad.sum_(ad.matmul(x, y)), [a, b]) < TOL
    # stacked left operand
    for i in range(10):
        a = rng.standard_normal((3, 2, 4))
        b = rng.standard_normal((4, 5))
        assert fd_gradcheck(
            lambda x, y: ad.mean_(ad.matmul(x, y)), [a, b]) < TOL


# ---------------------------------------------------------------- structural


def test_reshape_transpose_concat_slice():
    rng = _rng(105)
    for i in range(20):
        x = rng.standard_normal((4, 6))
        y = rng.standard_normal((2, 6))
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.mul(ad.reshape(a, (3, 8)),
                                     ad.reshape(a, (3, 8)))), [x]) < TOL
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.transpose(a, (1, 0))), [x]) < TOL
        assert fd_gradcheck(
            lambda a, b: ad.sum_(ad.concat([a, b], axis=0)), [x, y]) < TOL
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.slice_(a, (slice(1, 3), slice(None)))),
            [x]) < TOL
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.mul(ad.slice_(a, (slice(None), 2)),
                                     ad.slice_(a, (slice(None), 4)))),
            [x]) < TOL


def test_gather_rows_grad_accumulates_duplicates():
    rng = _rng(106)
    for i in range(20):
        x = rng.standard_normal((5, 3))
        idx = rng.integers(0, 5, size=8)  # duplicates likely
        w = rng.standard_normal((8, 3))
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.mul(ad.gather_rows(a, idx),
                                     ad.Tensor(w))), [x]) < TOL


def test_sum_mean_axis_variants():
    rng = _rng(107)
    x = rng.standard_normal((3, 4, 5))
    for axis in (None, 0, 2, (0, 1), (0, 2), (1, 2)):
        for keep in (False, True):
            assert fd_gradcheck(
                lambda a: ad.sum_(ad.mul(
                    ad.sum_(a, axis=axis, keepdims=keep),
                    ad.sum_(a, axis=axis, keepdims=keep))), [x]) < TOL
            assert fd_gradcheck(
                lambda a: ad.sum_(ad.exp(
                    ad.mean_(a, axis=axis, keepdims=keep))), [x]) < TOL


# ------------------------------------------------------------- normalization


def test_softmax_rows_and_grad():
    rng = _rng(108)
    for i in range(25):
        x = rng.standard_normal((3, 6)) * 3.0
        with ad.no_grad():
            p = ad.softmax(ad.Tensor(x), axis=-1).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        w = rng.standard_normal((3, 6))
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.mul(ad.softmax(a, axis=-1),
                                     ad.Tensor(w))), [x]) < TOL
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.mul(ad.log_softmax(a, axis=-1),
                                     ad.Tensor(w))), [x]) < TOL


def test_log_softmax_matches_log_of_softmax():
    rng = _rng(109)
    x = rng.standard_normal((4, 7)) * 5.0
    with ad.no_grad():
        a = ad.log_softmax(ad.Tensor(x), axis=-1).data
        b = np.log(ad.softmax(ad.Tensor(x), axis=-1).data)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_layer_norm_output_and_grad():
    rng = _rng(110)
    for i in range(20):
        x = rng.standard_normal((4, 9)) * 2.0 + 1.0
        with ad.no_grad():
            y = ad.layer_norm(ad.Tensor(x)).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        # eps keeps the variance slightly under 1
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)
        w = rng.standard_normal((4, 9))
        assert fd_gradcheck(
            lambda a: ad.sum_(ad.mul(ad.layer_norm(a),
                                     ad.Tensor(w))), [x]) < TOL


# -------------------------------------------------------------- grid sampling


def _manual_bilinear(feat, pts):
    H, W, C = feat.shape
    out = np.zeros((len(pts), C))
    for m, (x, y) in enumerate(pts):
        xc = min(max(x, 0.0), W - 1.0)
        yc = min(max(y, 0.0), H - 1.0)
        x0 = min(int(np.floor(xc)), W - 2) if W > 1 else 0
        y0 = min(int(np.floor(yc)), H - 2) if H > 1 else 0
        fx, fy = xc - x0, yc - y0
        out[m] = ((1 - fy) * ((1 - fx) * feat[y0, x0] + fx * feat[y0, x0 + 1])
                  + fy * ((1 - fx) * feat[y0 + 1, x0]
                          + fx * feat[y0 + 1, x0 + 1]))
    return out


def test_grid_sample_matches_manual_bilinear():
    rng = _rng(111)
    for i in range(30):
        H, W, C = rng.integers(2, 7, size=3)
        feat = rng.standard_normal((H, W, C))
        pts = np.column_stack([rng.uniform(-1.5, W + 0.5, 12),
                               rng.uniform(-1.5, H + 0.5, 12)])
        with ad.no_grad():
            got = ad.grid_sample_bilinear(ad.Tensor(feat),
                                          ad.Tensor(pts)).data
        np.testing.assert_allclose(got, _manual_bilinear(feat, pts),
                                   atol=1e-12)


def test_grid_sample_grads_interior_points():
    rng = _rng(112)
    for i in range(25):
        H, W, C = 4, 5, 3
        feat = rng.standard_normal((H, W, C))
        # cell interiors, away from integer seams where bilinear kinks
        pts = np.column_stack([
            rng.integers(0, W - 1, 6) + rng.uniform(0.2, 0.8, 6),
            rng.integers(0, H - 1, 6) + rng.uniform(0.2, 0.8, 6)])
        w = rng.standard_normal((6, C))
        err = fd_gradcheck(
            lambda f, p: ad.sum_(ad.mul(ad.grid_sample_bilinear(f, p),
                                        ad.Tensor(w))), [feat, pts])
        assert err < TOL


def test_grid_sample_point_grad_zero_outside_border():
    rng = _rng(113)
    feat = rng.standard_normal((4, 5, 2))
    pts = np.array([[-2.0, 1.5], [6.3, 2.2], [2.5, -1.7], [1.5, 5.4]])
    fts = ad.Tensor(feat, requires_grad=True)
    pt = ad.Tensor(pts, requires_grad=True)
    with ad.tape() as t:
        out = ad.sum_(ad.grid_sample_bilinear(fts, pt))
    t.backward(out)
    # clamped coordinate is flat, the other may still vary
    assert np.all(pt.grad[0, 0] == 0.0) and np.all(pt.grad[1, 0] == 0.0)
    assert np.all(pt.grad[2, 1] == 0.0) and np.all(pt.grad[3, 1] == 0.0)
    # feature still receives gradient from border pixels
    assert np.any(fts.grad != 0.0)


def test_grid_sample_empty_and_contract_errors():
    feat = ad.Tensor(np.zeros((3, 3, 2)))
    with ad.no_grad():
        out = ad.grid_sample_bilinear(feat, ad.Tensor(np.zeros((0, 2))))
    assert out.data.shape == (0, 2)
    with pytest.raises(ContractViolation):
        ad.grid_sample_bilinear(feat, ad.Tensor(np.zeros((4, 3))))
    with pytest.raises(ContractViolation):
        ad.grid_sample_bilinear(ad.Tensor(np.zeros((3, 3))),
                                ad.Tensor(np.zeros((4, 2))))


# ---------------------------------------------------------------- scatter add


def test_scatter_add_matches_ufunc_oracle():
    rng = _rng(114)
    for i in range(25):
        n, size, c = 12, 6, 3
        vals = rng.standard_normal((n, c))
        idx = rng.integers(0, size, size=n)
        with ad.no_grad():
            got = ad.scatter_add(ad.Tensor(vals), idx, size).data
        want = np.zeros((size, c))
        np.add.at(want, idx, vals)
        np.testing.assert_allclose(got, want, atol=1e-12)
        assert fd_gradcheck(
            lambda v: ad.sum_(ad.exp(ad.scatter_add(v, idx, size))),
            [vals]) < TOL


def test_scatter_add_unique_fast_path():
    rng = _rng(115)
    for i in range(20):
        size = 10
        idx = rng.permutation(size)[:6]
        vals = rng.standard_normal((6, 4))
        with ad.no_grad():
            got = ad.scatter_add(ad.Tensor(vals), idx, size,
                                 unique=True).data
        want = np.zeros((size, 4))
        want[idx] = vals
        np.testing.assert_allclose(got, want, atol=1e-12)
        assert fd_gradcheck(
            lambda v: ad.mean_(ad.mul(
                ad.scatter_add(v, idx, size, unique=True),
                ad.scatter_add(v, idx, size, unique=True))), [vals]) < TOL


# --------------------------------------------------------------------- losses


def test_mse_l1_loss_oracles():
    rng = _rng(116)
    for i in range(20):
        a = rng.standard_normal((5, 3))
        b = rng.standard_normal((5, 3)) + 1.5
        with ad.no_grad():
            mse = float(ad.mse_loss(ad.Tensor(a), ad.Tensor(b)).data)
            l1 = float(ad.l1_loss(ad.Tensor(a), ad.Tensor(b)).data)
        assert mse == pytest.approx(np.mean((a - b) ** 2), rel=1e-12)
        assert l1 == pytest.approx(np.mean(np.abs(a - b)), rel=1e-12)
        assert fd_gradcheck(
            lambda x, y: ad.mse_loss(x, y), [a, b]) < TOL
        assert fd_gradcheck(
            lambda x, y: ad.l1_loss(x, y), [a, b]) < TOL


def test_kl_loss_matches_rel_entr():
    rng = _rng(117)
    for i in range(20):
        a = rng.uniform(0.1, 1.0, (4, 6))
        a /= a.sum(axis=-1, keepdims=True)
        b = rng.uniform(0.1, 1.0, (4, 6))
        b /= b.sum(axis=-1, keepdims=True)
        with ad.no_grad():
            got = float(ad.kl_loss(ad.Tensor(a), ad.Tensor(b)).data)
        want = np.mean(special.rel_entr(b, a).sum(axis=-1))
        assert got == pytest.approx(want, rel=1e-9)

    # gradcheck through softmax so perturbed rows stay on the simplex
    x = rng.standard_normal((3, 5))
    y = rng.standard_normal((3, 5))
    assert fd_gradcheck(
        lambda u, v: ad.kl_loss(ad.softmax(u, axis=-1),
                                ad.softmax(v, axis=-1)), [x, y]) < TOL


def test_kl_loss_rejects_unnormalized_rows():
    bad = np.full((2, 3), 0.5)
    ok = np.full((2, 3), 1.0 / 3.0)
    with pytest.raises(ContractViolation):
        ad.kl_loss(ad.Tensor(bad), ad.Tensor(ok))
    with pytest.raises(ContractViolation):
        ad.kl_loss(ad.Tensor(ok), ad.Tensor(bad))


def _manual_focal(logits, labels, gamma, alpha):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    n = len(labels)
    pt = p[np.arange(n), labels]
    at = np.where(labels == p.shape[1] - 1, 1.0 - alpha, alpha)
    return float(np.mean(-at * (1.0 - pt) ** gamma * np.log(pt)))


def test_focal_class_loss_oracle():
    rng = _rng(118)
    for i in range(20):
        logits = rng.standard_normal((7, 4)) * 2.0
        labels = rng.integers(0, 4, size=7)
        with ad.no_grad():
            got = float(ad.focal_class_loss(
                ad.Tensor(logits), labels, gamma=2.0, alpha=0.25).data)
        assert got == pytest.approx(
            _manual_focal(logits, labels, 2.0, 0.25), rel=1e-9)
        assert fd_gradcheck(
            lambda lg: ad.focal_class_loss(lg, labels), [logits]) < TOL
    with pytest.raises(ContractViolation):
        ad.focal_class_loss(ad.Tensor(np.zeros((2, 4))),
                            np.array([0, 4]))


# ------------------------------------------------------------- tape semantics


def test_gradient_accumulation_on_fanout():
    x = ad.Tensor(np.array([2.0, -1.0]), requires_grad=True)
    with ad.tape() as t:
        y = ad.mul(x, x)
        out = ad.add(ad.sum_(y), ad.sum_(ad.mul(x, ad.Tensor(np.ones(2)))))
    t.backward(out)
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)


def test_no_grad_and_stop_grad():
    x = ad.Tensor(np.array([3.0]), requires_grad=True)
    with ad.no_grad():
        with ad.tape() as t:
            out = ad.sum_(ad.mul(x, x))
    assert not t.nodes
    with ad.tape() as t:
        out = ad.sum_(ad.mul(ad.stop_grad(ad.mul(x, x)), x))
    t.backward(out)
    np.testing.assert_allclose(x.grad, [9.0])  # only the outer factor


def test_backward_limited_to_root_ancestry():
    x = ad.Tensor(np.array([1.0]), requires_grad=True)
    y = ad.Tensor(np.array([2.0]), requires_grad=True)
    with ad.tape() as t:
        a = ad.sum_(ad.mul(x, x))
        b = ad.sum_(ad.mul(y, y))
    t.backward(a)
    np.testing.assert_allclose(x.grad, [2.0])
    assert y.grad is None


def test_cross_tape_tensor_is_constant():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    with ad.tape() as t1:
        mid = ad.mul(x, x)
    with ad.tape() as t2:
        out = ad.sum_(ad.mul(mid, mid))
    t2.backward(out)
    assert x.grad is None  # mid belongs to t1, treated as a constant on t2


def test_backward_rejects_foreign_root():
    x = ad.Tensor(np.array([1.0]), requires_grad=True)
    with ad.tape() as t1:
        out = ad.sum_(x)
    with ad.tape() as t2:
        pass
    with pytest.raises(ContractViolation):
        t2.backward(out)


def test_float32_graph_keeps_dtype():
    rng = _rng(119)
    x = ad.Tensor(rng.standard_normal((3, 4)).astype(np.float32),
                  requires_grad=True)
    with ad.tape() as t:
        out = ad.mean_(ad.gelu(ad.matmul(x, ad.transpose(x, (1, 0)))))
    assert out.data.dtype == np.float32
    t.backward(out)
    assert x.grad.dtype == np.float32
