"""Tests for the synthetic latent-space testbed."""

import numpy as np
import pytest

from cbolt import smiles, testbed


def ring_decoder() -> testbed.SyntheticDecoder:
    return testbed.make_diagnostic_decoder()


class TestStringCorruptor:
    def test_outputs_always_fail_validity(self):
        corruptor = testbed.StringCorruptor()
        pool = testbed.default_template_pool()
        rng = np.random.default_rng(0)
        for _ in range(300):
            template = pool[int(rng.integers(len(pool)))]
            corrupted = corruptor.corrupt(template, rng)
            assert not smiles.check_validity(corrupted).valid

    def test_deterministic_given_generator_state(self):
        corruptor = testbed.StringCorruptor()
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(7)
            outs.append([corruptor.corrupt("CC(C)CC", rng) for _ in range(20)])
        assert outs[0] == outs[1]


class TestSyntheticDecoder:
    def test_validation(self):
        anchors = np.zeros((3, 2))
        with pytest.raises(ValueError):
            testbed.SyntheticDecoder(anchors, validity_lengthscale=0.0)
        with pytest.raises(ValueError):
            testbed.SyntheticDecoder(anchors, 1.0, methane_bias=1.5)
        with pytest.raises(ValueError):
            testbed.SyntheticDecoder(anchors, 1.0, template_pool=["CC", "C((C"])

    def test_p_valid_on_anchor_is_one(self):
        dec = ring_decoder()
        assert testbed.p_valid(dec, dec.training_latents[3]) == 1.0

    def test_p_valid_monotone_in_anchor_distance(self):
        dec = ring_decoder()
        rng = np.random.default_rng(1)
        anchor = dec.training_latents[0]
        direction = np.array([1.0, 0.3])
        direction /= np.linalg.norm(direction)
        for _ in range(50):
            r1, r2 = np.sort(rng.uniform(0.0, 0.6, size=2))
            p_near = testbed.p_valid(dec, anchor + r1 * direction)
            p_far = testbed.p_valid(dec, anchor + r2 * direction)
            assert p_near >= p_far

    def test_decode_on_anchor_is_all_valid(self):
        dec = ring_decoder()
        out = testbed.synth_decode(dec, dec.training_latents[0], 500, seed=0)
        assert len(out) == 500
        assert all(smiles.check_validity(s).valid for s in out)

    def test_decode_matches_binomial_interval_at_half_validity(self):
        dec = ring_decoder()
        anchor = dec.training_latents[0]
        # Distance chosen so p_valid = 0.5; radially outward keeps this
        # anchor nearest on the ring.
        dist = dec.validity_lengthscale * np.sqrt(np.log(2.0))
        z = anchor + dist * anchor / np.linalg.norm(anchor)
        assert testbed.p_valid(dec, z) == pytest.approx(0.5, abs=1e-2)
        out = testbed.synth_decode(dec, z, 500, seed=3)
        frac = np.mean([smiles.check_validity(s).valid for s in out])
        # Valid strings arrive via templates (p) and via methane (0.7 (1-p)).
        p = testbed.p_valid(dec, z)
        expect = p + 0.7 * (1.0 - p)
        halfwidth = 2.58 * np.sqrt(expect * (1.0 - expect) / 500)
        assert abs(frac - expect) <= halfwidth

    def test_far_point_is_methane_or_invalid(self):
        dec = ring_decoder()
        z = np.array([200.0, 200.0])
        out = testbed.synth_decode(dec, z, 500, seed=0)
        bad = [s for s in out if s == testbed.METHANE or not smiles.check_validity(s).valid]
        assert len(bad) / len(out) >= 0.99

    def test_decode_deterministic(self):
        dec = ring_decoder()
        z = np.array([9.0, 2.0])
        assert testbed.synth_decode(dec, z, 100, seed=5) == \
            testbed.synth_decode(dec, z, 100, seed=5)

    def test_rejects_zero_attempts(self):
        with pytest.raises(ValueError):
            testbed.synth_decode(ring_decoder(), np.zeros(2), 0, seed=0)


class TestPerturbTrainingPoints:
    def test_zero_noise_is_identity(self):
        points = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(
            testbed.perturb_training_points(points, 0.0, seed=0), points)

    def test_fixed_seed_reproduces(self):
        points = np.ones((5, 2))
        a = testbed.perturb_training_points(points, 0.3, seed=4)
        b = testbed.perturb_training_points(points, 0.3, seed=4)
        np.testing.assert_array_equal(a, b)

    def test_half_noise_mean_relative_displacement(self):
        # E |z' - z| / |z| = 0.5 E|g| = 0.5 sqrt(2/pi) = 0.3989.
        points = np.full((4000, 3), 2.0)
        moved = testbed.perturb_training_points(points, 0.5, seed=1)
        rel = np.abs(moved - points) / points
        assert np.mean(rel) == pytest.approx(0.5 * np.sqrt(2.0 / np.pi), abs=0.01)

    def test_rejects_negative_noise(self):
        with pytest.raises(ValueError):
            testbed.perturb_training_points(np.ones((2, 2)), -0.1, seed=0)


class TestDiagnosticExperiment:
    def test_orderings_and_ranges(self):
        rows = testbed.diagnostic_experiment(
            ring_decoder(), testbed.DiagnosticConfig(seed=0))
        assert [r.group for r in rows] == list(testbed.DIAGNOSTIC_GROUPS)
        vals = [r.pct_valid for r in rows]
        meth = [r.pct_methane for r in rows]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert all(a < b for a, b in zip(meth, meth[1:]))
        for r in rows:
            assert 0.0 <= r.pct_methane <= 100.0
            assert 0.0 <= r.pct_druglike <= r.pct_valid <= 100.0

    def test_deterministic(self):
        cfg = testbed.DiagnosticConfig(points_per_group=5, decode_attempts=50, seed=2)
        assert testbed.diagnostic_experiment(ring_decoder(), cfg) == \
            testbed.diagnostic_experiment(ring_decoder(), cfg)

    def test_csv_output(self, tmp_path):
        cfg = testbed.DiagnosticConfig(points_per_group=3, decode_attempts=20, seed=0)
        rows = testbed.diagnostic_experiment(ring_decoder(), cfg)
        path = tmp_path / "diag.csv"
        testbed.write_diagnostic_csv(rows, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "group,pct_valid,pct_methane,pct_druglike"
        assert len(lines) == 6
        assert lines[1].startswith("train,")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            testbed.DiagnosticConfig(points_per_group=0)


class TestGenerateNegativeClass:
    def test_far_bounds_label_zero(self):
        dec = ring_decoder()
        bounds = np.array([[-40.0, 40.0], [-40.0, 40.0]])
        labeled = testbed.generate_negative_class(bounds, 60, 50, dec, seed=0)
        assert len(labeled) == 60
        assert np.mean([p.label for p in labeled]) <= 0.10

    def test_bounds_on_anchor_label_one(self):
        dec = ring_decoder()
        a = dec.training_latents[0]
        bounds = np.array([[a[0], a[0]], [a[1], a[1]]])
        labeled = testbed.generate_negative_class(bounds, 20, 50, dec, seed=0)
        assert all(p.label == 1 for p in labeled)

    def test_zero_points(self):
        assert testbed.generate_negative_class(
            np.array([[0.0, 1.0]]), 0, 10, ring_decoder(), seed=0) == []


class TestCompositeObjective:
    def test_arithmetic(self):
        assert testbed.composite_objective(
            testbed.ComponentScores(2.5, 1.0, 0.5)) == 1.0

    def test_plain_primary(self):
        assert testbed.composite_objective(
            testbed.ComponentScores(0.73, 0.0, 0.0)) == 0.73

    def test_zero(self):
        assert testbed.composite_objective(testbed.ComponentScores(0, 0, 0)) == 0.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            testbed.ComponentScores(np.inf, 0.0, 0.0)


class TestSyntheticLatentObjective:
    def test_value_at_best_center(self):
        anchors = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 7.0]])
        amps = np.array([1.0, 3.0, 2.0])
        got = testbed.synthetic_latent_objective(
            anchors[1], anchors, seed=0, amplitudes=amps, bump_width=1.5, noise_std=0.0)
        expected = sum(a * np.exp(-np.sum((c - anchors[1])**2) / (2 * 1.5**2))
                       for a, c in zip(amps, anchors))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_faraway_baseline_zero(self):
        anchors = np.zeros((2, 3))
        got = testbed.synthetic_latent_objective(
            np.full(3, 100.0), anchors, seed=0, noise_std=0.0)
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_noise_seed_contract(self):
        anchors = np.zeros((1, 2))
        z = np.array([0.5, 0.5])
        a = testbed.synthetic_latent_objective(z, anchors, seed=1)
        b = testbed.synthetic_latent_objective(z, anchors, seed=1)
        c = testbed.synthetic_latent_objective(z, anchors, seed=2)
        assert a == b
        assert a != c


class TestTestbedProblem:
    def setup_method(self):
        self.problem = testbed.TestbedProblem(dimension=4, seed=0,
                                              negative_pool_size=40,
                                              decode_attempts=50)

    def test_bounds_shape(self):
        bounds = self.problem.bounds
        assert bounds.shape == (4, 2)
        np.testing.assert_array_equal(bounds[:, 0], -bounds[:, 1])

    def test_evaluate_deterministic(self):
        z = np.array([0.5, -0.25, 1.0, 2.0])
        assert self.problem.evaluate(z) == self.problem.evaluate(z)

    def test_best_anchor_is_scored_and_feasible(self):
        best = int(np.argmax(self.problem.amplitudes))
        objective, label = self.problem.evaluate(self.problem.good_anchors[best])
        assert label == 1
        assert objective is not None
        assert -objective == pytest.approx(self.problem.best_score(), abs=0.3)

    def test_dead_corner_is_methane_plateau(self):
        z = np.full(4, self.problem.box_halfwidth * 0.99)
        objective, label = self.problem.evaluate(z)
        assert label == 0
        assert objective == -testbed.METHANE_SCORE

    def test_initial_observations(self):
        obs = self.problem.initial_observations(50, seed=3)
        assert len(obs) == 50
        assert all(o.iteration == 0 for o in obs)
        assert np.mean([o.constraint_satisfied for o in obs]) >= 0.9
        assert np.mean([o.objective is not None for o in obs]) >= 0.9

    def test_initial_constraint_pool_cached_and_negative(self):
        pool = self.problem.initial_constraint_pool()
        assert len(pool) == 40
        assert pool is self.problem.initial_constraint_pool()
        assert np.mean([p.label for p in pool]) <= 0.2

    def test_validation(self):
        with pytest.raises(ValueError):
            testbed.TestbedProblem(dimension=0)
        with pytest.raises(ValueError):
            testbed.TestbedProblem(num_anchors=4, num_good_anchors=5)


class TestDecoyAnchors:
    def setup_method(self):
        self.problem = testbed.TestbedProblem(
            dimension=4, seed=0, num_anchors=10, num_good_anchors=2,
            num_decoy_anchors=3, trivial_modal_score=4.5,
            negative_pool_size=40, decode_attempts=50)

    def test_decoy_core_scores_lure_but_labels_infeasible(self):
        for k in range(7, 10):
            objective, label = self.problem.evaluate(self.problem.anchors[k])
            assert objective == -4.5
            assert label == 0

    def test_decoy_outscores_every_good_anchor(self):
        decoy_obj, _ = self.problem.evaluate(self.problem.anchors[9])
        for k in range(2):
            good_obj, label = self.problem.evaluate(self.problem.anchors[k])
            assert label == 1
            assert decoy_obj < good_obj

    def test_non_decoy_anchors_keep_drug_templates(self):
        outcomes = testbed.synth_decode(self.problem.decoder,
                                        self.problem.anchors[4], 50, seed=1)
        assert sum(smiles.is_drug_like(s) for s in outcomes) >= 45

    def test_zero_decoys_matches_plain_problem(self):
        plain = testbed.TestbedProblem(dimension=4, seed=0, num_anchors=10,
                                       num_good_anchors=2,
                                       negative_pool_size=40,
                                       decode_attempts=50)
        z = plain.anchors[7]
        assert plain.evaluate(z) == testbed.TestbedProblem(
            dimension=4, seed=0, num_anchors=10, num_good_anchors=2,
            num_decoy_anchors=0, negative_pool_size=40,
            decode_attempts=50).evaluate(z)

    def test_validation(self):
        with pytest.raises(ValueError):
            testbed.TestbedProblem(num_anchors=10, num_good_anchors=6,
                                   num_decoy_anchors=5)
        with pytest.raises(ValueError):
            testbed.TestbedProblem(num_decoy_anchors=1,
                                   decoy_templates=("CCCCCC",))
        with pytest.raises(ValueError):
            testbed.TestbedProblem(num_decoy_anchors=1,
                                   decoy_templates=("((",))
