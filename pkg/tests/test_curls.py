import math

import numpy as np
import pytest

from curlswhey.baselines import BaselineConfig, i_fgsm
from curlswhey.core import Image, clip_to_ball, l2_distance, make_rng, spawn_rng, unit_direction
from curlswhey.curls import (
    CurlsConfig,
    MeanDirection,
    binary_search_refine,
    curls_attack,
    curls_round,
)
from curlswhey.models import Classifier, DenseLayer, ReluLayer, mlp_classifier
from curlswhey.oracles import QueryLedger, SubstituteOracle, TargetOracle


def pixel(v):
    return Image(np.array([v]), 1, 1, 1)


def threshold_model(thr, k=1000.0):
    """1-pixel classifier: label 1 iff v > thr."""
    return Classifier([DenseLayer(np.array([[-k, k]]), np.array([k * thr, -k * thr]))],
                      1, 1, 1, 2)


def piecewise_model(knots, gain=6.0):
    """1-pixel two-class model whose logit gap follows a piecewise-linear curve.

    knots: (v, z) pairs with increasing v starting at 0; label 1 iff z(v) > 0.
    Built from relu(v - v_i) units, so it is exact on [0, 1].
    """
    vs = [v for v, _ in knots]
    zs = [z for _, z in knots]
    slopes = [(z2 - z1) / (v2 - v1) for (v1, z1), (v2, z2) in zip(knots, knots[1:])]
    interior = vs[1:-1]
    w1 = np.ones((1, 1 + len(interior)))
    b1 = np.array([0.0] + [-v for v in interior])
    coeffs = [slopes[0]] + [s2 - s1 for s1, s2 in zip(slopes, slopes[1:])]
    w2 = np.zeros((1 + len(interior), 2))
    w2[:, 1] = np.array(coeffs) * gain
    b2 = np.array([0.0, (zs[0] - slopes[0] * vs[0]) * gain])
    return Classifier([DenseLayer(w1, b1), ReluLayer(), DenseLayer(w2, b2)], 1, 1, 1, 2)


def ascending_sub(c=5.0):
    """1-pixel substitute whose class-0 loss strictly increases with v."""
    return SubstituteOracle(Classifier([DenseLayer(np.array([[-c, c]]), np.zeros(2))],
                                       1, 1, 1, 2))


def constant_target(n_in, k=2):
    return TargetOracle([Classifier(
        [DenseLayer(np.zeros((n_in, k)), np.array([1.0] + [0.0] * (k - 1)))],
        n_in, 1, 1, k)])


DOUBLE_WELL_KNOTS = [(0.0, 6.0), (0.38, 0.0), (0.45, -1.5), (0.5, -1.0), (0.75, 0.0), (1.0, 1.0)]


class TestMeanDirection:
    def test_single_update(self):
        md = MeanDirection(2)
        md.update(np.zeros(2), np.array([3.0, 4.0]))
        np.testing.assert_allclose(md.value, [0.6, 0.8])
        assert md.count == 1

    def test_opposite_noises_cancel(self):
        md = MeanDirection(2)
        md.update(np.zeros(2), np.array([0.0, 1.0]))
        md.update(np.zeros(2), np.array([0.0, -1.0]))
        np.testing.assert_allclose(md.value, [0.0, 0.0], atol=1e-15)

    def test_three_random_updates_match_mean_oracle(self):
        rng = make_rng(5)
        x = rng.uniform(0, 1, 6)
        md = MeanDirection(6)
        units = []
        for _ in range(3):
            adv = x + rng.normal(0, 0.2, 6)
            md.update(x, adv)
            units.append(unit_direction(adv - x))
        np.testing.assert_allclose(md.value, np.mean(units, axis=0), atol=1e-12)

    def test_identical_point_rejected(self):
        md = MeanDirection(3)
        with pytest.raises(ValueError, match="adversarial"):
            md.update(np.ones(3), np.ones(3))

    def test_empty_mean_is_zero(self):
        assert not MeanDirection(4).value.any()


class TestBinarySearchRefine:
    def test_hand_traced_two_steps(self):
        target = TargetOracle([threshold_model(0.6)])
        out = binary_search_refine(pixel(0.0), 0, np.array([1.0]), target, bs=2)
        assert out[0] == pytest.approx(0.75)
        assert target.ledger.used == 2

    def test_hand_traced_three_steps(self):
        target = TargetOracle([threshold_model(0.6)])
        out = binary_search_refine(pixel(0.0), 0, np.array([1.0]), target, bs=3)
        assert out[0] == pytest.approx(0.625)
        assert target.ledger.used == 3

    def test_zero_steps_identity(self):
        target = TargetOracle([threshold_model(0.6)])
        out = binary_search_refine(pixel(0.0), 0, np.array([1.0]), target, bs=0)
        assert out[0] == 1.0
        assert target.ledger.used == 0

    def test_budget_exhaustion_returns_current_adversarial(self):
        target = TargetOracle([threshold_model(0.6)], budget=1)
        out = binary_search_refine(pixel(0.0), 0, np.array([1.0]), target, bs=5)
        # one query (0.5: not adversarial), then budget dies; 1.0 still adversarial
        assert out[0] == 1.0
        assert target.ledger.used == 1

    def test_never_increases_distance(self):
        rng = make_rng(3)
        x = pixel(0.1)
        for _ in range(10):
            adv = float(rng.uniform(0.7, 1.0))
            target = TargetOracle([threshold_model(0.6)])
            out = binary_search_refine(x, 0, np.array([adv]), target, bs=4)
            assert abs(out[0] - 0.1) <= abs(adv - 0.1) + 1e-12
            assert out[0] > 0.6  # still adversarial


class TestCurlsRound:
    def test_trajectory_b_matches_i_fgsm_bitwise(self):
        model = mlp_classifier(1, 2, 1, 2, seed=21, hidden=6)
        sub = SubstituteOracle(model)
        x = Image(np.array([0.4, 0.6]), 1, 2, 1)
        cfg = CurlsConfig(T0=1, T=6, bs=0, eps0=0.3, s=0.0)
        md = MeanDirection(2)
        _, trace = curls_round(x, 0, sub, constant_target(2), cfg, md, make_rng(0),
                               record_iterates=True)
        assert md.count == 0
        res = i_fgsm(x, 0, sub, constant_target(2),
                     BaselineConfig(eps=0.3, alpha=cfg.step, T=6))
        assert len(trace.iterates_b) == 6
        for mine, reference in zip(trace.iterates_b, res.trace):
            np.testing.assert_array_equal(mine, reference["iterate"])

    def test_double_well_beats_ascent_only(self):
        # grid-search oracle: nearest label flip on each side of x
        target_model = piecewise_model(DOUBLE_WELL_KNOTS)
        grid = np.linspace(0.0, 1.0, 20001)
        labels = target_model.forward_batch(grid[:, None]).argmax(axis=1)
        flips = grid[labels != 0]
        below = flips[flips < 0.5]
        above = flips[flips > 0.5]
        descent_crossing = 0.5 - below.max()
        ascent_crossing = above.min() - 0.5
        assert descent_crossing < ascent_crossing  # closer boundary on the descent side

        x = pixel(0.5)
        cfg = CurlsConfig(T0=1, T=8, bs=4, eps0=0.3, s=0.0)
        sub = ascending_sub()

        best = {"l2": float("inf")}

        def confirm(vec):
            best["l2"] = min(best["l2"], l2_distance(vec, x))

        target = TargetOracle([target_model])
        loss_at_x = float(-np.log(target_model.forward_batch(x.data[None, :])[0][0]))
        candidate, trace = curls_round(x, 0, sub, target, cfg, MeanDirection(1), make_rng(0),
                                       loss_at_x=loss_at_x, on_confirmed=confirm)
        assert candidate is not None

        # ascent-only reference: i_fgsm first flip, refined with the same allowance
        ref_target = TargetOracle([target_model])
        ref = i_fgsm(x, 0, sub, ref_target, BaselineConfig(eps=0.3, alpha=cfg.step, T=8))
        assert ref.success
        refined_ref = binary_search_refine(x, 0, ref.adversarial, ref_target, bs=4)
        assert best["l2"] < l2_distance(refined_ref, x)

    def test_downhill_flag_flips_once_at_loss_rise(self):
        target_model = piecewise_model(DOUBLE_WELL_KNOTS)
        x = pixel(0.5)
        cfg = CurlsConfig(T0=1, T=8, bs=0, eps0=0.3, s=0.0)
        target = TargetOracle([target_model])
        loss_at_x = float(-np.log(target_model.forward_batch(x.data[None, :])[0][0]))
        _, trace = curls_round(x, 0, ascending_sub(), target, cfg, MeanDirection(1),
                               make_rng(0), loss_at_x=loss_at_x, record_iterates=True)
        flags = trace.downhill_flags
        assert flags[0] is True  # first step goes downhill in target loss
        assert False in flags
        first_false = flags.index(False)
        assert all(f is False for f in flags[first_false:])

    def test_zero_gradients_leave_everything_unchanged(self):
        sub = SubstituteOracle(Classifier([DenseLayer(np.zeros((1, 2)), np.zeros(2))],
                                          1, 1, 1, 2))
        x = pixel(0.5)
        cfg = CurlsConfig(T0=1, T=5, bs=3, eps0=0.3, s=0.0)
        md = MeanDirection(1)
        target = constant_target(1)
        candidate, trace = curls_round(x, 0, sub, target, cfg, md, make_rng(0),
                                       record_iterates=True)
        assert candidate is None
        assert md.count == 0
        assert all(it[0] == 0.5 for it in trace.iterates_a + trace.iterates_b)
        assert trace.queries == 2 * cfg.T  # no candidate, so no bisection queries

    def test_query_count_with_refinement(self):
        target = TargetOracle([piecewise_model(DOUBLE_WELL_KNOTS)])
        x = pixel(0.5)
        cfg = CurlsConfig(T0=1, T=8, bs=4, eps0=0.3, s=0.0)
        _, trace = curls_round(x, 0, ascending_sub(), target, cfg, MeanDirection(1),
                               make_rng(0), loss_at_x=0.3)
        assert trace.queries == 2 * cfg.T + cfg.bs


class TestCurlsAttack:
    def test_single_round_reduction(self):
        target_model = piecewise_model(DOUBLE_WELL_KNOTS)
        x = pixel(0.5)
        cfg = CurlsConfig(T0=1, T=8, bs=3, eps0=0.3, s=0.0)
        res = curls_attack(x, 0, ascending_sub(), TargetOracle([target_model]), cfg,
                           spawn_rng(9, 0))

        # manual composition: one scores read, then a single round
        manual_target = TargetOracle([target_model])
        scores = manual_target.query_scores(x)
        loss_at_x = manual_target.loss_of(scores, 0)
        best = {"vec": None, "l2": float("inf")}

        def confirm(vec):
            d = l2_distance(vec, x)
            if d < best["l2"]:
                best["vec"], best["l2"] = vec.copy(), d

        curls_round(x, 0, ascending_sub(), manual_target, cfg, MeanDirection(1),
                    spawn_rng(9, 0), eps=cfg.eps0, loss_at_x=loss_at_x, on_confirmed=confirm)
        assert res.success
        np.testing.assert_array_equal(res.adversarial, best["vec"])
        assert res.queries == manual_target.ledger.used

    def test_same_seed_identical(self):
        target_model = piecewise_model(DOUBLE_WELL_KNOTS)
        x = pixel(0.5)
        cfg = CurlsConfig(T0=4, T=6, bs=2, eps0=0.3, s=0.2)
        runs = [curls_attack(x, 0, ascending_sub(), TargetOracle([target_model]), cfg,
                             make_rng(11)) for _ in range(2)]
        assert runs[0].success == runs[1].success
        np.testing.assert_array_equal(runs[0].adversarial, runs[1].adversarial)
        assert runs[0].queries == runs[1].queries

    def test_radius_schedule_contracts_after_successful_rounds(self):
        target_model = piecewise_model(DOUBLE_WELL_KNOTS)
        cfg = CurlsConfig(T0=4, T=8, bs=2, eps0=0.3, s=0.05)
        res = curls_attack(pixel(0.5), 0, ascending_sub(), TargetOracle([target_model]),
                           cfg, make_rng(2))
        assert res.success
        eps_values = [t.eps for t in res.trace]
        produced = [t.refined_l2 is not None for t in res.trace]
        for i in range(1, len(eps_values)):
            if produced[i - 1]:
                assert eps_values[i] < eps_values[i - 1]
            else:
                assert eps_values[i] == eps_values[i - 1]

    def test_budget_cap_and_exhaustion_fallback(self, blob_dataset, zoo):
        from curlswhey.harness import sample_attack_set

        sample = sample_attack_set(blob_dataset, zoo, 2)
        cfg = CurlsConfig(T0=10, T=4, bs=2, eps0=0.3, s=0.05)
        idx = int(sample[0])
        x, y = blob_dataset.image(idx), int(blob_dataset.y[idx])
        full_cap = 1 + cfg.T0 * (2 * cfg.T + cfg.bs)
        target = TargetOracle([zoo[1]], budget=200)
        res = curls_attack(x, y, SubstituteOracle(zoo[0]), target, cfg, make_rng(0))
        assert res.queries <= full_cap <= cfg.T0 * (cfg.T + cfg.bs) * 2 + 80
        # tiny budget: must stop gracefully and still report a usable result
        target_small = TargetOracle([zoo[1]], budget=7)
        res_small = curls_attack(x, y, SubstituteOracle(zoo[0]), target_small, cfg, make_rng(0))
        assert res_small.queries <= 7
        if res_small.success:
            assert TargetOracle([zoo[1]]).query_label(res_small.adversarial) != y

    def test_already_misclassified_input_short_circuits(self):
        # target disagrees with the claimed label: immediate zero-noise success
        target = TargetOracle([threshold_model(0.3)])
        res = curls_attack(pixel(0.5), 0, ascending_sub(), target,
                           CurlsConfig(T0=2, T=2, bs=1, s=0.0), make_rng(0))
        assert res.success and res.l2 == 0.0 and res.queries == 1
