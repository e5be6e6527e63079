import numpy as np
import pytest
import scipy.linalg

from avgbs.operators import spectral_norm
from avgbs.semigroup import (
    NONCOMMUTING_WITNESS,
    CommutingPair,
    MonotoneMatrix,
    commuting_family,
    compose_piecewise,
    exp_identity_residual,
    expm_neg,
    flow_bound,
    verify_exp_identity,
    yosida,
    yosida_flow_convergence,
    yosida_rate_experiment,
)


class TestMonotoneMatrix:
    def test_rejects_nonmonotone(self):
        with pytest.raises(ValueError, match="monotone"):
            MonotoneMatrix(np.array([[-1.0, 0.0], [0.0, 1.0]]))

    def test_random_probes_nonnegative(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            a = MonotoneMatrix.random_monotone(30, seed=seed)
            for _ in range(20):
                v = rng.normal(size=30)
                assert v @ (a.mat @ v) >= -1e-9 * (v @ v)


class TestExpm:
    def test_zero_matrix(self):
        assert np.array_equal(expm_neg(np.zeros((3, 3))), np.eye(3))

    def test_diagonal(self):
        out = expm_neg(np.diag([1.0, 2.0]), t=1.0)
        assert np.allclose(out, np.diag([np.exp(-1), np.exp(-2)]), atol=1e-15)

    def test_methods_agree_on_symmetric(self):
        for seed in range(5):
            a = MonotoneMatrix.random_spd(50, seed=seed)
            eig = expm_neg(a, method="eig")
            pade = expm_neg(a, method="pade")
            assert spectral_norm(eig - pade) <= 1e-12

    def test_contraction_for_monotone(self):
        rng = np.random.default_rng(7)
        for seed in range(5):
            a = MonotoneMatrix.random_monotone(40, seed=seed)
            for t in (0.1, 1.0, 5.0):
                e = expm_neg(a, t)
                for _ in range(10):
                    v = rng.normal(size=40)
                    assert np.linalg.norm(e @ v) <= np.linalg.norm(v) * (1 + 1e-12)

    def test_derivative_bound_symmetric(self):
        rng = np.random.default_rng(8)
        a = MonotoneMatrix.random_spd(40, seed=3)
        e = expm_neg(a, 0.7)
        for _ in range(10):
            v = rng.normal(size=40)
            assert np.linalg.norm(a.mat @ (e @ v)) <= \
                np.linalg.norm(a.mat @ v) * (1 + 1e-12)


class TestExpIdentity:
    def test_equal_diagonal_pair(self):
        pair = CommutingPair(basis=np.eye(2),
                             spectrum1=np.array([1.0, 2.0]),
                             spectrum2=np.array([1.0, 2.0]))
        assert verify_exp_identity(pair) <= 1e-13

    def test_random_pairs(self):
        for seed in range(10):
            pair = CommutingPair.random(50, seed=seed)
            assert verify_exp_identity(pair) <= 1e-10

    def test_large_commuting_pair(self):
        pair = CommutingPair.random(200, seed=0)
        assert verify_exp_identity(pair) <= 1e-10

    def test_noncommuting_witness_fails(self):
        a1, a2 = NONCOMMUTING_WITNESS
        # both factors are monotone, only commutation is missing
        MonotoneMatrix(a1), MonotoneMatrix(a2)
        assert exp_identity_residual(a1, a2) > 1e-3

    def test_pair_constructor_rejects_noncommuting(self):
        with pytest.raises(ValueError):
            CommutingPair(basis=np.array([[1.0, 0.1], [0.0, 1.0]]),
                          spectrum1=np.array([1.0, 2.0]),
                          spectrum2=np.array([3.0, 1.0]))


class TestYosida:
    def test_scalar_value(self):
        j, a_lam = yosida(np.array([[2.0]]), 0.5)
        assert a_lam[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_diagonal_formula(self):
        d = np.array([0.5, 1.0, 4.0])
        for lam in (0.3, 0.05):
            j, a_lam = yosida(np.diag(d), lam)
            assert np.allclose(np.diag(a_lam), d / (1 + lam * d), atol=1e-14)

    def test_resolvent_contraction_and_surrogate_bound(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            a = MonotoneMatrix.random_spd(40, seed=seed)
            for lam in (1.0, 0.1, 0.01):
                j, a_lam = yosida(a, lam)
                assert spectral_norm(j) <= 1.0 + 1e-12
                for _ in range(10):
                    v = rng.normal(size=40)
                    assert np.linalg.norm(a_lam @ v) <= \
                        np.linalg.norm(a.mat @ v) * (1 + 1e-12)

    def test_surrogate_converges_monotonically(self):
        rng = np.random.default_rng(11)
        a = MonotoneMatrix.random_spd(40, seed=9)
        probes = rng.normal(size=(12, 40))
        worst = []
        for lam in (1e-1, 1e-2, 1e-3, 1e-4):
            a_lam = yosida(a, lam)[1]
            errs = np.linalg.norm(probes @ (a_lam - a.mat).T, axis=1)
            worst.append(float(errs.max()))
        assert all(b < a_ for a_, b in zip(worst, worst[1:]))

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ValueError):
            yosida(np.eye(2), 0.0)


class TestFlowConvergence:
    def test_identical_lambdas_observe_zero(self):
        pair = CommutingPair.random(30, seed=1)
        u0 = np.ones(30)
        rows = yosida_flow_convergence(pair, u0, [1e-2, 1e-2], t=1.0)
        diag = [r for r in rows if r["lam"] == r["mu"]]
        assert all(r["observed"] == 0.0 for r in diag)
        assert all(r["bound"] > 0 for r in diag)

    def test_diagonal_pair_closed_form(self):
        # scalar modes decay as exp(-t * a/(1+lam a)); check one mode exactly
        d = np.array([2.0, 0.5])
        pair = CommutingPair(basis=np.eye(2), spectrum1=d, spectrum2=d)
        u0 = np.array([1.0, 0.0])
        rows = yosida_flow_convergence(pair, u0, [0.1, 0.01], t=1.0)
        lam, mu = 0.1, 0.01
        f = lambda l: 2.0 / (1 + l * 2.0)  # both operators share the spectrum
        expect = abs(np.exp(-2 * f(lam)) - np.exp(-2 * f(mu)))
        row = next(r for r in rows if r["lam"] == mu and r["mu"] == lam)
        assert row["observed"] == pytest.approx(expect, rel=1e-12)
        assert row["ratio"] <= 1.0

    def test_ratios_below_one_randomized(self):
        for seed in range(5):
            pair = CommutingPair.random(50, seed=seed)
            rng = np.random.default_rng(100 + seed)
            u0 = rng.normal(size=50)
            rows = yosida_flow_convergence(pair, u0, [1e-1, 1e-2, 1e-3], t=1.0)
            assert max(r["ratio"] for r in rows) <= 1.0

    def test_rate_experiment_slope_near_half(self):
        out = yosida_rate_experiment()
        assert abs(out["slope"] - 0.5) <= 0.15


class TestComposition:
    def test_single_segment(self):
        a = MonotoneMatrix.random_spd(20, seed=4)
        prod, direct, diff = compose_piecewise([(a, 0.7)])
        assert np.allclose(prod, expm_neg(a, 0.7), atol=1e-14)
        assert diff <= 1e-12

    def test_two_equal_segments_semigroup_property(self):
        a = MonotoneMatrix.random_spd(20, seed=6)
        prod, direct, diff = compose_piecewise([(a, 0.3), (a, 0.9)])
        assert diff <= 1e-12
        assert spectral_norm(prod - expm_neg(a, 1.2)) <= 1e-12

    def test_five_commuting_segments(self):
        mats = commuting_family(5, dim=50, seed=0)
        segments = list(zip(mats, (0.1, 0.3, 0.05, 0.25, 0.3)))
        _, _, diff = compose_piecewise(segments)
        assert diff <= 1e-10

    def test_rejects_bad_duration(self):
        a = MonotoneMatrix.random_spd(5, seed=0)
        with pytest.raises(ValueError):
            compose_piecewise([(a, 0.0)])
