"""Volume estimators and proxies: analytic fixtures, underapproximation
ordering, gradient agreement against the finite-difference oracle."""
from __future__ import annotations

import numpy as np
import pytest

from fscbf.volume import (
    Box,
    HPolytope,
    McConfig,
    VolumeMethod,
    cbf_tag,
    chebyshev_proxy,
    ellipsoid_proxy,
    is_empty,
    mc_volume,
    proxy_gradient_fd,
    smoothed_mc_volume,
)
from helpers import (
    UNIT_BOX,
    half_box_polytope,
    mc_sigma,
    random_bounded_polytope,
    triangle_polytope,
)


def box_only() -> HPolytope:
    return HPolytope.from_box(UNIT_BOX)


class TestIsEmpty:
    def test_box_not_empty(self):
        assert not is_empty(box_only())

    def test_disjoint_halfspace_empty(self):
        p = HPolytope.from_box(UNIT_BOX, [[-1.0, 0.0]], [-2.0], (cbf_tag(0),))
        assert is_empty(p)

    def test_measure_zero_slab_empty(self):
        p = HPolytope.from_box(UNIT_BOX, [[1.0, 0.0], [-1.0, 0.0]],
                               [0.0, 0.0], (cbf_tag(0), cbf_tag(1)))
        assert is_empty(p)


class TestMcVolume:
    def test_unconstrained_box_is_exact(self):
        for k in (1, 7, 100):
            res = mc_volume(box_only(), UNIT_BOX, McConfig(k, seed=1))
            assert res.value == 4.0

    def test_half_box(self):
        res = mc_volume(half_box_polytope(), UNIT_BOX, McConfig(10_000, seed=2))
        sigma = mc_sigma(2.0, 4.0, 10_000)
        assert abs(res.value - 2.0) <= 3.0 * sigma

    def test_triangle(self):
        res = mc_volume(triangle_polytope(), UNIT_BOX, McConfig(10_000, seed=3))
        sigma = mc_sigma(0.5, 4.0, 10_000)
        assert abs(res.value - 0.5) <= 3.0 * sigma

    def test_deterministic_per_seed(self):
        p = triangle_polytope()
        a = mc_volume(p, UNIT_BOX, McConfig(500, seed=42))
        b = mc_volume(p, UNIT_BOX, McConfig(500, seed=42))
        assert a.value == b.value

    def test_unbiased_over_seeds(self):
        p = half_box_polytope()
        vals = np.array([mc_volume(p, UNIT_BOX, McConfig(2000, seed=s)).value
                         for s in range(50)])
        stderr = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - 2.0) <= 3.0 * stderr


class TestSmoothedMc:
    def test_half_box_analytic_band(self):
        # Exact smoothed integral: 2 - eps for eps = 0.1 -> 1.9.
        cfg = McConfig(20_000, seed=5, smoothing_width=0.1)
        res = smoothed_mc_volume(half_box_polytope(), UNIT_BOX, cfg)
        sigma = mc_sigma(1.9, 4.0, cfg.sample_count)
        assert abs(res.value - 1.9) <= 3.0 * sigma

    def test_no_rows_full_box(self):
        cfg = McConfig(100, seed=5, smoothing_width=0.1)
        assert smoothed_mc_volume(box_only(), UNIT_BOX, cfg).value == 4.0

    def test_vanishing_width_matches_plain(self):
        p = triangle_polytope()
        cfg = McConfig(5_000, seed=6, smoothing_width=1e-13)
        plain = mc_volume(p, UNIT_BOX, McConfig(5_000, seed=6))
        assert smoothed_mc_volume(p, UNIT_BOX, cfg).value == plain.value

    @pytest.mark.parametrize("width", [0.01, 0.1, 0.5, 2.0])
    def test_never_exceeds_plain_sample_exact(self, width):
        rng = np.random.default_rng(7)
        for _ in range(10):
            m = int(rng.integers(2, 4))
            p, box = random_bounded_polytope(rng, m)
            seed = int(rng.integers(0, 2**32))
            cfg_s = McConfig(2_000, seed=seed, smoothing_width=width)
            cfg_p = McConfig(2_000, seed=seed)
            assert (smoothed_mc_volume(p, box, cfg_s).value
                    <= mc_volume(p, box, cfg_p).value)


class TestChebyshevProxy:
    def test_unit_box(self):
        res = chebyshev_proxy(box_only())
        assert abs(res.value - 1.0) <= 1e-6
        assert not res.degenerate
        assert abs(res.grad_b.sum() - 1.0) <= 1e-6

    def test_inactive_row_zero_gradient(self):
        p = HPolytope.from_box(UNIT_BOX, [[1.0, 0.0]], [5.0], (cbf_tag(0),))
        res = chebyshev_proxy(p)
        assert abs(res.value - 1.0) <= 1e-6
        assert res.grad_b[0] == 0.0
        assert np.all(res.grad_A[0] == 0.0)

    def test_empty_polytope(self):
        p = HPolytope.from_box(UNIT_BOX, [[-1.0, 0.0]], [-2.0], (cbf_tag(0),))
        res = chebyshev_proxy(p)
        assert res.value == 0.0
        assert res.degenerate

    def test_unbounded_raises(self):
        p = HPolytope([[1.0, 0.0]], [1.0], (cbf_tag(0),))
        with pytest.raises(ValueError):
            chebyshev_proxy(p)


class TestEllipsoidProxy:
    def test_unit_box(self):
        res = ellipsoid_proxy(box_only())
        assert abs(res.value - 1.0) <= 1e-6

    def test_scaled_box(self):
        box = Box([-2.0, -1.0], [2.0, 1.0])
        res = ellipsoid_proxy(HPolytope.from_box(box))
        assert abs(res.value - 2.0) <= 1e-6

    def test_triangle_matches_inellipse_determinant(self):
        res = ellipsoid_proxy(triangle_polytope())
        expected = 1.0 / (6.0 * np.sqrt(3.0))
        assert abs(res.value - expected) <= 1e-3 * expected

    def test_degenerate_falls_back(self):
        p = HPolytope.from_box(UNIT_BOX, [[1.0, 0.0], [-1.0, 0.0]],
                               [0.0, 0.0], (cbf_tag(0), cbf_tag(1)))
        res = ellipsoid_proxy(p)
        assert res.value == 0.0
        assert res.degenerate
        assert res.diagnostics["ellipsoid_fallback"] == "degenerate"
        assert res.method is VolumeMethod.CHEBYSHEV


def asym_box_builder(dA, db):
    """Box [-1,1] x [-0.8,0.8]: radius pinned by the y-walls only, so the
    Chebyshev duals are unique and FD agreement is clean."""
    box = Box([-1.0, -0.8], [1.0, 0.8])
    A, b = box.halfspace_rows()
    return HPolytope(A + dA, b + db, ("bound",) * 4)


def sym_box_builder(dA, db):
    A, b = UNIT_BOX.halfspace_rows()
    return HPolytope(A + dA, b + db, ("bound",) * 4)


class TestProxyGradientFd:
    def test_chebyshev_dual_matches_fd(self):
        res = chebyshev_proxy(asym_box_builder(0.0, 0.0))
        fd = proxy_gradient_fd(asym_box_builder, VolumeMethod.CHEBYSHEV,
                               with_details=True)
        # y-wall rows (indices 1 and 3) carry duals of 1/2 each.
        for i in (1, 3):
            assert abs(res.grad_b[i] - 0.5) <= 1e-6
            assert abs(fd.grad_b[i] - res.grad_b[i]) <= 1e-4 * 0.5
        # x-wall rows are slack: both dual and FD gradients vanish.
        for i in (0, 2):
            assert abs(res.grad_b[i]) <= 1e-8
            assert abs(fd.grad_b[i]) <= 1e-8

    def test_symmetric_box_is_detected_as_active_set_change(self):
        fd = proxy_gradient_fd(sym_box_builder, VolumeMethod.CHEBYSHEV,
                               with_details=True)
        assert fd.active_set_changed_b.any()

    def test_symmetric_box_ellipsoid_gradients_equal(self):
        res = ellipsoid_proxy(sym_box_builder(0.0, 0.0))
        fd = proxy_gradient_fd(sym_box_builder, VolumeMethod.ELLIPSOID)
        grad_A_dual, grad_b_dual = res.grad_A, res.grad_b
        np.testing.assert_allclose(grad_b_dual, grad_b_dual[0], rtol=1e-5)
        np.testing.assert_allclose(fd[1], grad_b_dual, rtol=1e-3)
        np.testing.assert_allclose(fd[0], grad_A_dual, rtol=1e-3, atol=1e-6)


def agreement_check(res, fd, rel=1e-3, floor=1e-6):
    """Compare dual-based and FD gradients outside excluded entries."""
    bad = 0
    total = 0
    for dual, num, excl in ((res.grad_A, fd.grad_A, fd.active_set_changed_A),
                            (res.grad_b, fd.grad_b, fd.active_set_changed_b)):
        keep = ~excl
        scale = np.maximum(np.maximum(np.abs(dual), np.abs(num)), floor)
        mismatch = np.abs(dual - num) > rel * scale
        big = np.maximum(np.abs(dual), np.abs(num)) > floor
        bad += int(np.count_nonzero(mismatch & big & keep))
        total += int(np.count_nonzero(keep))
    return bad, total, int(np.count_nonzero(excl))


class TestGradientAgreement:
    @pytest.mark.parametrize("method", [VolumeMethod.CHEBYSHEV,
                                        VolumeMethod.ELLIPSOID])
    def test_random_polytopes(self, method):
        rng = np.random.default_rng(23)
        n_bad = 0
        n_total = 0
        n_excl = 0
        for _ in range(25):
            m = int(rng.integers(2, 4))
            p, _ = random_bounded_polytope(rng, m)

            def builder(dA, db, base=p):
                return HPolytope(base.A + dA, base.b + db, base.row_tags)

            res = (chebyshev_proxy(p) if method is VolumeMethod.CHEBYSHEV
                   else ellipsoid_proxy(p))
            fd = proxy_gradient_fd(builder, method, with_details=True)
            bad, total, excl = agreement_check(res, fd)
            n_bad += bad
            n_total += total
            n_excl += excl
        assert n_bad == 0
        assert n_excl <= 0.05 * (n_total + n_excl)


class TestInvariants:
    def test_underapproximation_chain(self):
        rng = np.random.default_rng(31)
        for _ in range(12):
            m = int(rng.integers(2, 4))
            p, box = random_bounded_polytope(rng, m)
            cheb = chebyshev_proxy(p)
            ell = ellipsoid_proxy(p)
            mc = mc_volume(p, box, McConfig(100_000, seed=9))
            if cheb.degenerate:
                continue
            unit_ball = np.pi if m == 2 else 4.0 * np.pi / 3.0
            ball_vol = unit_ball * cheb.value ** m
            ell_vol = unit_ball * ell.value
            sigma = mc_sigma(mc.value, box.volume, 100_000)
            assert ball_vol <= ell_vol + 1e-9
            assert ell_vol <= mc.value + 3.0 * sigma

    def test_monotone_in_b(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            m = int(rng.integers(2, 4))
            p, _ = random_bounded_polytope(rng, m)
            i = int(rng.integers(0, p.n_rows))
            b_up = p.b.copy()
            b_up[i] += 0.25
            p_up = HPolytope(p.A, b_up, p.row_tags)
            assert chebyshev_proxy(p_up).value >= chebyshev_proxy(p).value - 1e-9
            assert ellipsoid_proxy(p_up).value >= ellipsoid_proxy(p).value - 1e-9

    def test_json_round_trip(self, tmp_path):
        p = triangle_polytope()
        path = tmp_path / "fixture.json"
        p.save(path)
        q = HPolytope.load(path)
        assert np.array_equal(p.A, q.A)
        assert np.array_equal(p.b, q.b)
        assert p.row_tags == q.row_tags
