import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monolift.geometry import wrap_angle
from monolift.multibin import (
    DegenerateResidual,
    InvalidLayout,
    LossWeights,
    MultiBinOutput,
    decode,
    encode,
    loss_conf,
    loss_loc,
    loss_total,
    make_layout,
    normalize_residual,
    target_output,
)

local_angles = st.floats(-math.pi, math.pi, exclude_max=True)


def _covering_bins(theta, n, half_width):
    """Independent coverage oracle: shortest angular distance by brute force over 2*pi shifts."""
    out = []
    for i in range(n):
        c = -math.pi + 2 * math.pi * i / n
        d = min(abs(theta - c + 2 * math.pi * k) for k in (-2, -1, 0, 1, 2))
        out.append(d <= half_width)
    return out


class TestLayout:
    def test_two_bins(self):
        lay = make_layout(2, 1.1)
        np.testing.assert_allclose(lay.centers, [-math.pi, 0.0])
        assert lay.half_width == pytest.approx(1.1 * math.pi / 2)

    @pytest.mark.parametrize("n", [2, 3, 4, 8])
    def test_even_spacing(self, n):
        c = make_layout(n, 1.2).centers
        np.testing.assert_allclose(np.diff(c), 2 * math.pi / n, atol=1e-12)

    def test_dense_sweep_coverage(self):
        lay = make_layout(4, 1.2)
        thetas = np.linspace(-math.pi, math.pi, 100_000, endpoint=False)
        counts = np.array([sum(_covering_bins(t, 4, lay.half_width)) for t in thetas[::10]])
        assert counts.min() >= 1 and counts.max() == 2
        # boundaries halfway between centers sit in an overlap
        for i in range(4):
            mid = -math.pi + 2 * math.pi * (i + 0.5) / 4
            assert sum(_covering_bins(mid, 4, lay.half_width)) == 2
        # the module's own coverage agrees with the oracle on the full sweep subset
        for t in thetas[::97]:
            assert list(lay.covers(t)) == _covering_bins(t, 4, lay.half_width)

    @pytest.mark.parametrize("n,f", [(1, 1.1), (2, 1.0), (2, 0.5), (2, 2.0), (3, 3.5)])
    def test_invalid(self, n, f):
        with pytest.raises(InvalidLayout):
            make_layout(n, f)


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize_residual((3, 4)), (0.6, 0.8))

    def test_direction_preserved(self):
        np.testing.assert_allclose(normalize_residual((0.01, 0)), (1.0, 0.0))

    def test_degenerate(self):
        with pytest.raises(DegenerateResidual):
            normalize_residual((0, 0))
        with pytest.raises(DegenerateResidual):
            normalize_residual((1e-13, -1e-13))


class TestEncodeDecode:
    def test_center_angle(self):
        lay = make_layout(4, 1.2)
        t = encode(lay.centers[2], lay)
        assert t.covered[2] and t.residuals[2] == 0.0

    def test_overlap_region_has_two_bins(self):
        lay = make_layout(4, 1.2)
        for theta in np.linspace(-math.pi, math.pi, 2001, endpoint=False):
            oracle = _covering_bins(theta, 4, lay.half_width)
            assert list(encode(theta, lay).covered) == oracle
            assert 1 <= sum(oracle) <= 2

    @given(local_angles)
    def test_residuals_reconstruct_angle(self, theta):
        lay = make_layout(3, 1.5)
        t = encode(theta, lay)
        for i in np.flatnonzero(t.covered):
            assert abs(wrap_angle(lay.centers[i] + t.residuals[i] - theta)) < 1e-12

    def test_perfect_encoding_round_trip(self, rng):
        lay = make_layout(2, 1.1)
        for theta in rng.uniform(-math.pi, math.pi, 1000):
            assert abs(wrap_angle(decode(target_output(encode(theta, lay)), lay) - theta)) < 1e-9

    @given(local_angles, st.data())
    def test_any_covered_bin_decodes(self, theta, data):
        lay = make_layout(4, 1.3)
        t = encode(theta, lay)
        i = data.draw(st.sampled_from(list(np.flatnonzero(t.covered))))
        conf = np.zeros(4)
        conf[i] = 1.0
        scale = data.draw(st.floats(0.1, 10.0))
        res = scale * np.column_stack([np.cos(t.residuals), np.sin(t.residuals)])
        assert abs(wrap_angle(decode(MultiBinOutput(conf, res), lay) - theta)) < 1e-9

    def test_tie_uses_lowest_index(self):
        lay = make_layout(2, 1.1)
        out = MultiBinOutput([0.5, 0.5], [[math.cos(0.1), math.sin(0.1)], [1, 0]])
        assert decode(out, lay) == pytest.approx(wrap_angle(-math.pi + 0.1))

    @given(st.floats(0.01, 100), st.floats(-50, 50))
    def test_affine_invariance(self, a, b):
        lay = make_layout(4, 1.2)
        rng = np.random.default_rng(7)
        conf = rng.normal(size=4)
        res = rng.normal(size=(4, 2))
        assert decode(MultiBinOutput(a * conf + b, res), lay) == decode(MultiBinOutput(conf, res), lay)

    def test_flat_layout(self):
        out = MultiBinOutput.from_flat([1, 2, 3, 4, 5, 6])
        np.testing.assert_array_equal(out.confidences, [1, 4])
        np.testing.assert_array_equal(out.residuals, [[2, 3], [5, 6]])
        np.testing.assert_array_equal(out.to_flat(), [1, 2, 3, 4, 5, 6])
        with pytest.raises(ValueError):
            MultiBinOutput.from_flat([1, 2, 3, 4, 5])

    def test_decode_degenerate_selected_bin(self):
        with pytest.raises(DegenerateResidual):
            decode(MultiBinOutput([1.0, 0.0], [[0, 0], [1, 0]]), make_layout(2, 1.1))


def _single_cover_target(n):
    lay = make_layout(n, 1.05)
    t = encode(lay.centers[0], lay)
    assert t.n_covered == 1
    return lay, t


class TestLosses:
    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_uniform_scores(self, n):
        _, t = _single_cover_target(n)
        assert loss_conf(np.full(n, 0.3), t) == pytest.approx(math.log(n), abs=1e-12)

    def test_saturated(self):
        _, t = _single_cover_target(2)
        assert loss_conf([1e9, 0.0], t) == pytest.approx(0.0, abs=1e-12)

    def test_hand_cross_entropy(self):
        _, t = _single_cover_target(2)
        # -log(e / (e + 1)) = log(1 + e^-1)
        assert loss_conf([1.0, 0.0], t) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-15)

    def test_conf_monotone_in_covered_score(self):
        lay = make_layout(4, 1.2)
        t = encode(0.4, lay)
        i = int(np.flatnonzero(t.covered)[0])
        prev = math.inf
        for s in np.linspace(-5, 5, 50):
            conf = np.array([0.2, -0.1, 0.5, 0.0])
            conf[i] = s
            cur = loss_conf(conf, t)
            assert cur < prev
            prev = cur

    def test_loc_perfect_is_minus_one(self, rng):
        for n in (2, 4, 8):
            lay = make_layout(n, 1.4)
            for theta in rng.uniform(-math.pi, math.pi, 50):
                t = encode(theta, lay)
                assert loss_loc(target_output(t), t, lay) == pytest.approx(-1.0, abs=1e-15)

    def test_loc_off_by_pi_is_plus_one(self):
        lay = make_layout(4, 1.2)
        t = encode(0.3, lay)
        flipped = t.residuals + math.pi
        out = MultiBinOutput(np.ones(4), np.column_stack([np.cos(flipped), np.sin(flipped)]))
        assert loss_loc(out, t, lay) == pytest.approx(1.0, abs=1e-12)

    def test_loc_matches_scalar_formula(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 9))
            lay = make_layout(n, rng.uniform(1.05, 1.9))
            theta = rng.uniform(-math.pi, math.pi)
            raw = rng.normal(size=(n, 2))
            out = MultiBinOutput(rng.normal(size=n), raw)
            t = encode(theta, lay)
            # direct evaluation: -1/n* sum cos(theta* - c_i - dtheta_i) over covered bins
            total, count = 0.0, 0
            for i in range(n):
                c_i = -math.pi + 2 * math.pi * i / n
                d = abs(math.atan2(math.sin(theta - c_i), math.cos(theta - c_i)))
                if d <= lay.half_width:
                    dtheta = math.atan2(raw[i, 1], raw[i, 0])
                    total += math.cos(theta - c_i - dtheta)
                    count += 1
            assert loss_loc(out, t, lay) == pytest.approx(-total / count, abs=1e-12)

    def test_total_w_zero(self, rng):
        lay = make_layout(4, 1.2)
        t = encode(1.0, lay)
        out = MultiBinOutput(rng.normal(size=4), rng.normal(size=(4, 2)))
        assert loss_total(out, t, lay, LossWeights(w=0.0)) == loss_conf(out.confidences, t)

    def test_total_perfect_saturated(self):
        lay, t = _single_cover_target(2)
        out = target_output(t)
        out = MultiBinOutput(out.confidences * 1e9, out.residuals)
        assert loss_total(out, t, lay, LossWeights(w=1.0)) == pytest.approx(-1.0, abs=1e-12)

    def test_total_linear_in_w(self, rng):
        lay = make_layout(4, 1.2)
        for _ in range(100):
            t = encode(rng.uniform(-math.pi, math.pi), lay)
            out = MultiBinOutput(rng.normal(size=4), rng.normal(size=(4, 2)))
            diff = loss_total(out, t, lay, LossWeights(w=2.0)) - loss_total(out, t, lay, LossWeights(w=1.0))
            assert diff == pytest.approx(loss_loc(out, t, lay), abs=1e-12)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4),
           st.lists(st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6), min_size=8, max_size=8),
           local_angles)
    def test_losses_finite(self, conf, res, theta):
        lay = make_layout(4, 1.2)
        t = encode(theta, lay)
        out = MultiBinOutput(conf, np.reshape(res, (4, 2)))
        assert math.isfinite(loss_total(out, t, lay))
        assert loss_conf(conf, t) >= 0
        assert -1 - 1e-12 <= loss_loc(out, t, lay) <= 1 + 1e-12

    def test_default_weights(self):
        w = LossWeights()
        assert (w.w, w.conf_scale) == (0.7, 1.0)
