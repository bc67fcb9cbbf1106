import dataclasses

import numpy as np
import pytest

from cbolt import gp
from oracles import central_difference, exact_gp, relative_error

EQUIV_JITTER = 1e-9


def random_problem(seed: int, n: int = 8, d: int = 2):
    """Well-conditioned regression problem for equivalence checks."""
    rng = np.random.default_rng(1000 + seed)
    X = rng.uniform(0.0, 4.0, size=(n, d))
    ls = rng.uniform(0.8, 1.5, size=d)
    s2 = float(rng.uniform(0.5, 2.0))
    noise = float(rng.uniform(0.05, 0.2))
    y = rng.normal(1.5, 1.0, size=n)
    Zq = rng.uniform(0.0, 4.0, size=(5, d))
    kernel = gp.KernelHyperparams(np.log(ls), np.log(s2))
    model = gp.FitcModel(kernel, X.copy(), np.log(noise), jitter=EQUIV_JITTER)
    return model, X, y, Zq, ls, s2, noise


class TestArdKernel:
    def test_zero_distance_is_signal_variance(self):
        hp = gp.KernelHyperparams(np.zeros(3), 0.0)
        x = np.array([[0.3, -1.2, 2.0]])
        assert gp.ard_kernel(x, x, hp)[0, 0] == pytest.approx(1.0)

    def test_unit_distance_1d(self):
        hp = gp.KernelHyperparams(np.zeros(1), 0.0)
        val = gp.ard_kernel(np.array([[0.0]]), np.array([[1.0]]), hp)[0, 0]
        assert val == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_huge_distance_underflows_to_zero(self):
        hp = gp.KernelHyperparams(np.zeros(1), 0.0)
        val = gp.ard_kernel(np.array([[0.0]]), np.array([[100.0]]), hp)[0, 0]
        assert val < 1e-300

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(6, 2))
        hp = gp.KernelHyperparams(rng.normal(size=2), 0.4)
        K = gp.ard_kernel(X, X, hp)
        assert np.allclose(K, K.T)
        assert np.all(K > 0.0)
        assert np.all(K <= np.exp(0.4) + 1e-12)

    def test_dimension_mismatch_rejected(self):
        hp = gp.KernelHyperparams(np.zeros(2), 0.0)
        with pytest.raises(ValueError):
            gp.ard_kernel(np.zeros((3, 2)), np.zeros((3, 3)), hp)

    def test_psd_over_hyperparameter_draws(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            X = rng.normal(size=(12, 3))
            hp = gp.KernelHyperparams(rng.normal(0, 1, size=3), float(rng.normal(0, 1)))
            noise = float(np.exp(rng.normal(-2, 1)))
            K = gp.ard_kernel(X, X, hp) + (noise + 1e-5) * np.eye(12)
            np.linalg.cholesky(K)


class TestNlml:
    def test_single_point_closed_form(self):
        # One observation y=0, unit signal and unit noise: the marginal is
        # N(0, 2) and the NLML is 0.5*log(4*pi).
        hp = gp.KernelHyperparams(np.zeros(1), 0.0)
        model = gp.FitcModel(hp, np.array([[0.5]]), 0.0)
        val = gp.fitc_negative_log_marginal(model, np.array([[0.5]]), np.array([0.0]))
        assert val == pytest.approx(0.5 * np.log(4.0 * np.pi), rel=1e-9)

    def test_matches_exact_oracle_with_full_inducing(self):
        for seed in range(10):
            model, X, y, _, ls, s2, noise = random_problem(seed)
            got = gp.fitc_negative_log_marginal(model, X, y)
            want, _, _ = exact_gp(X, y, X, ls, s2, noise, EQUIV_JITTER)
            assert relative_error(got, want) < 1e-6

    def test_sparse_value_finite_and_deterministic(self):
        model, X, y, _, _, _, _ = random_problem(0)
        sparse = dataclasses.replace(model, inducing_locations=X[:3].copy())
        a = gp.fitc_negative_log_marginal(sparse, X, y)
        b = gp.fitc_negative_log_marginal(sparse, X, y)
        assert np.isfinite(a)
        assert a == b


class TestGradients:
    def test_log_hyperparameter_gradients_match_fd(self):
        step, tol = 1e-5, 1e-4
        for seed in range(3):
            rng = np.random.default_rng(40 + seed)
            n, d, M = 10, 3, 4
            X = rng.uniform(-2, 2, size=(n, d))
            y = rng.normal(size=n)
            Z = X[rng.choice(n, M, replace=False)] + 0.01 * rng.normal(size=(M, d))
            base = np.concatenate([rng.normal(0, 0.3, size=d), [0.2, -1.0]])

            def nlml(theta):
                hp = gp.KernelHyperparams(theta[:d], theta[d])
                return gp.fitc_negative_log_marginal(
                    gp.FitcModel(hp, Z, theta[d + 1]), X, y)

            fd = central_difference(nlml, base, step)
            hp = gp.KernelHyperparams(base[:d], base[d])
            got = gp.fitc_gradients(gp.FitcModel(hp, Z, base[d + 1]), X, y)
            analytic = np.concatenate([got["log_lengthscales"],
                                       [got["log_signal_variance"], got["log_noise_variance"]]])
            assert relative_error(analytic, fd, floor=1e-6) < tol

    def test_inducing_location_gradients_match_fd(self):
        rng = np.random.default_rng(50)
        n, d, M = 10, 2, 4
        X = rng.uniform(-2, 2, size=(n, d))
        y = rng.normal(size=n)
        Z0 = X[rng.choice(n, M, replace=False)] + 0.01 * rng.normal(size=(M, d))
        hp = gp.KernelHyperparams(rng.normal(0, 0.3, size=d), 0.1)

        def nlml(zflat):
            return gp.fitc_negative_log_marginal(
                gp.FitcModel(hp, zflat.reshape(M, d), -1.0), X, y)

        fd = central_difference(nlml, Z0.ravel(), 1e-5)
        got = gp.fitc_gradients(gp.FitcModel(hp, Z0, -1.0), X, y)["inducing_locations"]
        assert relative_error(got.ravel(), fd, floor=1e-6) < 1e-4


class TestFit:
    def smooth_data(self):
        rng = np.random.default_rng(11)
        X = np.linspace(-3, 3, 25)[:, None]
        y = np.sin(X[:, 0]) + 0.05 * rng.normal(size=25)
        return X, y

    def test_nlml_strictly_decreases_on_smooth_data(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        before = gp.fitc_negative_log_marginal(model, X, y)
        cfg = gp.AdamConfig(epochs=400, seed=1)
        fitted = gp.fit(model, X, y, cfg)
        after = gp.fitc_negative_log_marginal(fitted, X, y)
        assert after < before

    def test_never_worse_than_initial(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        before = gp.fitc_negative_log_marginal(model, X, y)
        fitted = gp.fit(model, X, y, gp.AdamConfig(epochs=3, seed=2))
        assert gp.fitc_negative_log_marginal(fitted, X, y) <= before

    def test_zero_epochs_is_identity(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        fitted = gp.fit(model, X, y, gp.AdamConfig(epochs=0, seed=3))
        assert np.array_equal(fitted.kernel.log_lengthscales, model.kernel.log_lengthscales)
        assert fitted.kernel.log_signal_variance == model.kernel.log_signal_variance
        assert fitted.log_noise_variance == model.log_noise_variance
        assert np.array_equal(fitted.inducing_locations, model.inducing_locations)

    def test_bit_reproducible(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        cfg = gp.AdamConfig(epochs=20, seed=7)
        a = gp.fit(model, X, y, cfg)
        b = gp.fit(model, X, y, cfg)
        assert np.array_equal(a.kernel.log_lengthscales, b.kernel.log_lengthscales)
        assert a.kernel.log_signal_variance == b.kernel.log_signal_variance
        assert a.log_noise_variance == b.log_noise_variance
        assert np.array_equal(a.inducing_locations, b.inducing_locations)

    def test_frozen_inducing_points_stay_put(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        cfg = gp.AdamConfig(epochs=10, seed=4, optimize_inducing=False)
        fitted = gp.fit(model, X, y, cfg)
        assert np.array_equal(fitted.inducing_locations, model.inducing_locations)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_epoch(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        cfg = gp.AdamConfig(learning_rate=1e6, epochs=50, seed=5)
        with pytest.raises(gp.TrainingDivergedError) as exc:
            gp.fit(model, X, y, cfg)
        assert 0 <= exc.value.epoch < 50

    def test_minibatch_larger_than_data_rejected(self):
        X, y = self.smooth_data()
        model = gp.make_model(X, y, num_inducing=5, seed=0)
        with pytest.raises(ValueError):
            gp.fit(model, X, y, gp.AdamConfig(minibatch_size=26))


class TestPredict:
    def test_matches_exact_oracle_with_full_inducing(self):
        for seed in range(10):
            model, X, y, Zq, ls, s2, noise = random_problem(seed)
            fitted = gp.factorize(model, X, y)
            pred = gp.predict(fitted, Zq)
            _, mean, var = exact_gp(X, y, Zq, ls, s2, noise, EQUIV_JITTER)
            assert relative_error(pred.mean, mean) < 1e-6
            assert relative_error(pred.latent_variance, var) < 1e-6
            assert pred.noise_variance == pytest.approx(noise)

    def test_interpolates_noise_free_training_point(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(0, 4, size=(8, 2))
        y = rng.normal(1.0, 0.5, size=8)
        hp = gp.KernelHyperparams(np.log(np.full(2, 1.2)), 0.0)
        model = gp.FitcModel(hp, X.copy(), np.log(1e-10), jitter=EQUIV_JITTER)
        pred = gp.predict(gp.factorize(model, X, y), X)
        assert relative_error(pred.mean, y) < 1e-6

    def test_far_query_reverts_to_prior(self):
        model, X, y, _, _, s2, _ = random_problem(1)
        fitted = gp.factorize(model, X, y)
        pred = gp.predict(fitted, np.full((1, 2), 500.0))
        assert abs(pred.mean[0]) < 1e-8
        assert pred.latent_variance[0] == pytest.approx(s2, rel=1e-9)

    def test_shapes_and_nonnegative_variance(self):
        model, X, y, Zq, _, _, _ = random_problem(2)
        fitted = gp.factorize(model, X, y)
        pred = gp.predict(fitted, Zq[:3])
        assert pred.mean.shape == (3,)
        assert pred.latent_variance.shape == (3,)
        assert np.all(pred.latent_variance >= 0.0)

    def test_unfactorized_model_raises(self):
        model, _, _, Zq, _, _, _ = random_problem(3)
        with pytest.raises(gp.StaleModelError):
            gp.predict(model, Zq)

    def test_pure_function_of_state(self):
        model, X, y, Zq, _, _, _ = random_problem(4)
        fitted = gp.factorize(model, X, y)
        a = gp.predict(fitted, Zq)
        b = gp.predict(fitted, Zq)
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.latent_variance, b.latent_variance)

    def test_mean_and_variance_gradients_match_fd(self):
        model, X, y, _, _, _, _ = random_problem(5)
        fitted = gp.factorize(model, X, y)
        z0 = np.array([1.7, 2.3])

        fd_mean = central_difference(lambda z: gp.predict(fitted, z[None, :]).mean[0], z0, 1e-6)
        fd_var = central_difference(
            lambda z: gp.predict(fitted, z[None, :]).latent_variance[0], z0, 1e-6)
        mg, vg = gp.predict_gradients(fitted, z0)
        assert relative_error(mg, fd_mean, floor=1e-8) < 1e-5
        assert relative_error(vg, fd_var, floor=1e-8) < 1e-5


class TestConditioning:
    def test_condition_matches_refactorize(self):
        model, X, y, Zq, _, _, _ = random_problem(6)
        fitted = gp.factorize(model, X, y)
        z_new = np.array([2.0, 2.0])
        y_new = 1.3
        via_condition = fitted.condition(z_new, y_new)
        via_rebuild = gp.factorize(model, np.vstack([X, z_new]), np.append(y, y_new))
        a = gp.predict(via_condition, Zq)
        b = gp.predict(via_rebuild, Zq)
        assert np.allclose(a.mean, b.mean, atol=1e-12)
        assert np.allclose(a.latent_variance, b.latent_variance, atol=1e-12)

    def test_condition_leaves_original_untouched(self):
        model, X, y, Zq, _, _, _ = random_problem(7)
        fitted = gp.factorize(model, X, y)
        before = gp.predict(fitted, Zq).mean.copy()
        fitted.condition(np.array([2.0, 2.0]), 5.0)
        assert np.array_equal(gp.predict(fitted, Zq).mean, before)


class TestMakeModelAndSerialization:
    def test_inducing_are_subsample_of_training_inputs(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        model = gp.make_model(X, y, num_inducing=10, seed=5)
        assert model.inducing_locations.shape == (10, 4)
        rows = {tuple(r) for r in X}
        assert all(tuple(r) in rows for r in model.inducing_locations)

    def test_bad_inducing_count_rejected(self):
        X = np.zeros((5, 2))
        y = np.zeros(5)
        with pytest.raises(ValueError):
            gp.make_model(X, y, num_inducing=6)
        with pytest.raises(ValueError):
            gp.make_model(X, y, num_inducing=0)

    def test_json_roundtrip(self):
        model, X, y, Zq, _, _, _ = random_problem(8)
        doc = gp.to_json(model)
        back = gp.from_json(doc)
        a = gp.predict(gp.factorize(model, X, y), Zq)
        b = gp.predict(gp.factorize(back, X, y), Zq)
        assert np.array_equal(a.mean, b.mean)
        assert back.jitter == model.jitter
