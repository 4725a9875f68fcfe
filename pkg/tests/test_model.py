import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from madalign import datagen as dg
from madalign import metrics as mt
from madalign import model as mm
from madalign.errors import AlignmentPreconditionError, ConditioningError, ShapeError
from madalign.kernels import ArdKernelParams, GaussianLatent, InducingInputs
from madalign.optimize import OptimizerConfig

from oracles import dense_view_bound_1d, kl_unit_gaussian, rel_err

DENSE_MU = np.array([-1.2, -0.3, 0.4, 1.5])
DENSE_S = np.array([0.3, 0.1, 0.5, 0.2])
DENSE_Y1 = np.array([[0.5, -1.0], [0.1, 0.3], [-0.7, 0.8], [1.1, 0.2]])
DENSE_Y2 = np.array([[1.0], [0.4], [-0.2], [-0.9]])
DENSE_Z1 = np.array([-0.8, 0.9])
DENSE_Z2 = np.array([-0.2, 0.6])
# value of the quadrature oracle in tests/oracles.py on the instance above
DENSE_EXPECTED = -26.447738513239212


def dense_model():
    v1 = mm.ViewModel(ArdKernelParams(1.3, np.array([0.7])), 0.2, InducingInputs(DENSE_Z1[:, None]), np.zeros(2))
    v2 = mm.ViewModel(ArdKernelParams(0.8, np.array([1.6])), 0.5, InducingInputs(DENSE_Z2[:, None]), np.zeros(1))
    return mm.MadModel(GaussianLatent(DENSE_MU[:, None], DENSE_S[:, None]), v1, v2, 1, DENSE_Y1, DENSE_Y2)


def random_model(rng, kind="rbf", N=5, Q=3, M=3):
    Y1 = rng.standard_normal((N, 4))
    Y2 = rng.standard_normal((N, 3))
    m = mm.initialize(Y1, Y2, Q, M, seed=1, kernel=kind)
    m.latent = GaussianLatent(m.latent.means + 0.3 * rng.standard_normal((N, Q)), rng.uniform(0.2, 1.0, (N, Q)))
    for v in (m.view1, m.view2):
        v.kernel = ArdKernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0, Q), kind=kind)
        v.noise_variance = rng.uniform(0.1, 0.5)
    return m, Y1, Y2


def fd_check(m, Y1, Y2, h=1e-5):
    x = mm.pack(m)

    def f(v):
        return mm.free_energy(mm.unpack(m, v), Y1, Y2, grad=False)[0]

    _, g = mm.free_energy(m, Y1, Y2)
    analytic = mm.pack_grads(m, g)
    numeric = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])
    return rel_err(analytic, numeric).max()


class TestInitialize:
    def test_shapes(self):
        Y = np.random.default_rng(0).standard_normal((10, 4))
        m = mm.initialize(Y, Y, 2, 5, seed=0)
        assert m.latent.means.shape == (10, 2)
        assert m.view1.Z.shape == (5, 2) and m.view2.Z.shape == (5, 2)
        assert len({r.tobytes() for r in m.view1.Z}) == 5

    def test_deterministic(self):
        Y = np.random.default_rng(0).standard_normal((10, 4))
        a = mm.model_to_dict(mm.initialize(Y, Y, 2, 5, seed=3))
        b = mm.model_to_dict(mm.initialize(Y, Y, 2, 5, seed=3))
        assert a == b

    def test_defaults(self):
        rng = np.random.default_rng(1)
        Y1, Y2 = rng.standard_normal((8, 3)), 5 * rng.standard_normal((8, 2))
        m = mm.initialize(Y1, Y2, 3)
        np.testing.assert_array_equal(m.latent.variances, 0.5)
        np.testing.assert_allclose(m.view1.kernel.weights, 1 / 3)
        assert m.view2.noise_variance == pytest.approx(0.1 * np.mean(Y2.var(0)))
        assert m.view1.Z.shape[0] == 8

    def test_pca_columns(self):
        rng = np.random.default_rng(2)
        Y1, Y2 = rng.standard_normal((12, 3)), rng.standard_normal((12, 3))
        X = mm.initialize(Y1, Y2, 2).latent.means
        Y = np.hstack([Y1, Y2])
        Y = (Y - Y.mean(0)) / Y.std(0)
        U = np.linalg.svd(Y, full_matrices=False)[0][:, :2]
        # same column space as the leading principal directions
        proj = U @ U.T @ X
        np.testing.assert_allclose(proj, X, atol=1e-10)

    def test_row_mismatch(self):
        with pytest.raises(AlignmentPreconditionError):
            mm.initialize(np.zeros((4, 2)), np.zeros((5, 2)), 2)

    def test_reduced_rank_warns(self):
        t = np.linspace(0, 1, 6)[:, None]
        Y = np.hstack([t, 2 * t])
        with pytest.warns(RuntimeWarning, match="rank"):
            m = mm.initialize(Y, Y, 3, 2)
        np.testing.assert_array_equal(m.latent.means[:, 1:], 0.0)

    def test_bad_m(self):
        with pytest.raises(ValueError):
            mm.initialize(np.eye(3), np.eye(3), 2, 4)


class TestFreeEnergy:
    def test_dense_oracle(self):
        val, _ = mm.free_energy(dense_model(), DENSE_Y1, DENSE_Y2)
        assert val == pytest.approx(DENSE_EXPECTED, rel=1e-8)

    def test_dense_oracle_live(self):
        # recompute the frozen constant so a drift in the oracle shows up too
        o = (
            dense_view_bound_1d(DENSE_MU, DENSE_S, DENSE_Z1, 1.3, 0.7, 0.2, DENSE_Y1)
            + dense_view_bound_1d(DENSE_MU, DENSE_S, DENSE_Z2, 0.8, 1.6, 0.5, DENSE_Y2)
            - kl_unit_gaussian(DENSE_MU, DENSE_S)
        )
        assert o == pytest.approx(DENSE_EXPECTED, rel=1e-10)

    def test_view_swap(self):
        m, Y1, Y2 = random_model(np.random.default_rng(3))
        a, _ = mm.free_energy(m, Y1, Y2)
        b, _ = mm.free_energy(m.swapped(), Y2, Y1)
        assert a == pytest.approx(b, rel=1e-13)

    @pytest.mark.parametrize("kind", ["rbf", "linear"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients(self, kind, seed):
        m, Y1, Y2 = random_model(np.random.default_rng(seed), kind)
        assert fd_check(m, Y1, Y2) < 1e-4

    def test_dimension_permutation(self):
        m, Y1, Y2 = random_model(np.random.default_rng(4))
        a, _ = mm.free_energy(m, Y1, Y2)
        perm = np.array([2, 0, 1])
        m.latent = GaussianLatent(m.latent.means[:, perm], m.latent.variances[:, perm])
        for v in (m.view1, m.view2):
            v.kernel = ArdKernelParams(v.kernel.signal_variance, v.kernel.weights[perm])
            v.inducing = InducingInputs(v.Z[:, perm])
        b, _ = mm.free_energy(m, Y1, Y2)
        assert a == pytest.approx(b, rel=1e-12)

    def test_shape_error(self):
        m, Y1, Y2 = random_model(np.random.default_rng(5))
        with pytest.raises(ShapeError):
            mm.free_energy(m, Y1[:4], Y2[:4])

    def test_conditioning_error(self):
        with pytest.raises(ConditioningError):
            mm._cholesky(-np.eye(3))


class TestTrain:
    def test_zero_iterations(self):
        m, Y1, Y2 = random_model(np.random.default_rng(6))
        before = mm.model_to_dict(m)
        out = mm.train(m, Y1, Y2, OptimizerConfig(max_iters=0))
        after = mm.model_to_dict(out)
        assert len(out.trace) == 1
        assert out.trace[0][1] == pytest.approx(mm.free_energy(m, Y1, Y2, grad=False)[0])
        after["trace"] = before["trace"]
        assert after == before

    @pytest.mark.parametrize("kind", ["rbf", "linear"])
    def test_monotone_and_improves(self, kind):
        ds = dg.generate_toy(dg.ToyConfig(n_points=20, seed=1))
        m = mm.initialize(ds.view1, ds.view2, 4, 8, seed=0, kernel=kind)
        f0 = mm.free_energy(m, ds.view1, ds.view2, grad=False)[0]
        out = mm.train(m, ds.view1, ds.view2, OptimizerConfig(max_iters=60), warmup_iters=20)
        fs = [f for _, f in out.trace]
        assert all(b >= a for a, b in zip(fs, fs[1:]))
        assert np.all(np.isfinite(fs))
        assert out.final_free_energy >= f0
        assert mm.free_energy(out, ds.view1, ds.view2, grad=False)[0] == pytest.approx(out.final_free_energy)

    def test_continued_training_extends_trace(self):
        ds = dg.generate_toy(dg.ToyConfig(n_points=15, seed=2))
        m = mm.initialize(ds.view1, ds.view2, 3, 5, seed=0)
        a = mm.train(m, ds.view1, ds.view2, OptimizerConfig(max_iters=5))
        b = mm.train(a, ds.view1, ds.view2, OptimizerConfig(max_iters=5))
        its = [i for i, _ in b.trace]
        assert its == sorted(its) and len(set(its)) == len(its)

    def test_aligned_beats_misaligned(self):
        # a misalignment of Kendall-tau ~0.4 must lower the trained free energy
        ds = dg.generate_toy(dg.ToyConfig(n_points=50, seed=0))
        k = 1
        while mt.kendall_tau_distance(mt.generate_misalignment(50, k, 0)) < 0.4:
            k += 1
        perm = mt.generate_misalignment(50, k, 0)
        cfg = mm.ModelConfig(Q=4, kernel="linear")
        good = mm.fit(ds.view1, ds.view2, cfg, seed=0).final_free_energy
        bad = mm.fit(ds.view1, ds.view2[perm], cfg, seed=0).final_free_energy
        assert good > bad

    def test_non_finite_start_flags_failure(self):
        m, Y1, Y2 = random_model(np.random.default_rng(7))
        Y1 = Y1.copy()
        Y1[0, 0] = np.inf
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = mm.train(m, Y1, Y2, OptimizerConfig(max_iters=5))
        assert out.failed


class TestRelevance:
    def test_threshold_example(self):
        W = np.array([[1.0, 0.9, 0.001], [0.95, 0.002, 0.8]])
        p = mm.profile_from_weights(W, 0.05)
        assert p.shared_dims == {0} and p.private_dims_view1 == {1} and p.private_dims_view2 == {2}

    def test_all_shared(self):
        W = np.array([[1.0, 0.5, 0.3], [1.0, 0.5, 0.3]])
        p = mm.profile_from_weights(W, 0.05)
        assert p.shared_dims == {0, 1, 2} and not p.private_dims_view1 and not p.private_dims_view2

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, (2, 5), elements=st.floats(0, 10)), st.floats(0.01, 0.99))
    def test_partition(self, raw, threshold):
        m, _, _ = random_model(np.random.default_rng(0), Q=5, M=3)
        m.view1.kernel = ArdKernelParams(1.0, raw[0])
        m.view2.kernel = ArdKernelParams(1.0, raw[1])
        p = mm.relevance_profile(m, threshold)
        W = p.normalized_weights
        assert np.all((W >= 0) & (W <= 1))
        for row in W:
            assert row.max() == 1.0 or np.all(row == 0)
        sets = [p.shared_dims, p.private_dims_view1, p.private_dims_view2, p.off_dims]
        assert sum(len(s) for s in sets) == 5
        assert set().union(*sets) == set(range(5))

    def test_threshold_range(self):
        m, _, _ = random_model(np.random.default_rng(8))
        with pytest.raises(ValueError):
            mm.relevance_profile(m, 1.0)


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["rbf", "linear"])
    def test_round_trip(self, tmp_path, kind):
        m, Y1, Y2 = random_model(np.random.default_rng(9), kind)
        m = mm.train(m, Y1, Y2, OptimizerConfig(max_iters=3))
        path = tmp_path / "model.json"
        mm.save_model(m, path)
        back = mm.load_model(path)
        assert mm.model_to_dict(back) == mm.model_to_dict(m)
        np.testing.assert_array_equal(back.latent.means, m.latent.means)
        assert mm.free_energy(back, Y1, Y2, grad=False)[0] == mm.free_energy(m, Y1, Y2, grad=False)[0]


@pytest.mark.slow
def test_scaling_a_view_keeps_alignment():
    from madalign import align as al

    ds = dg.generate_toy(dg.ToyConfig(n_points=60, seed=4))
    A, B = dg.anchor_split(60, 12, "random", 4)
    cfg = mm.ModelConfig(kernel="linear")
    perms = []
    for c in (1.0, 3.0):
        Y1 = c * ds.view1
        m = mm.fit(Y1[A], ds.view2[A], cfg, seed=4)
        perms.append(al.align_nonmyopic(m, Y1[B], ds.view2[B], seed=4).permutation)
    np.testing.assert_array_equal(perms[0], perms[1])
