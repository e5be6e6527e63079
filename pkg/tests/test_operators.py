import numpy as np
import pytest

from avgbs.grids import DomainSpec, build_grid
from avgbs.operators import (
    DiscreteOperator,
    OperatorCoefficients,
    apply,
    assemble,
    commutator_norm,
    monotonicity_shift,
    spectral_norm,
)
from avgbs.schedules import MarketModel, averaged_operator_coeffs


def unit_grid_1d(nodes=7, lo=1.0, hi=np.e):
    # [ln lo, ln hi] = [0, 1] for lo=1, hi=e
    return build_grid(DomainSpec((lo,), (hi,)), nodes)


def coeffs_1d(a=0.5, b=0.0, q=0.0):
    return OperatorCoefficients(a=np.array([[a]]), b=np.array([b]), q=q)


class TestAssemble1D:
    def test_laplacian_stencil(self):
        # h = 1 grid: [0, 3] in log space with 4 nodes
        grid = build_grid(DomainSpec((1.0,), (np.exp(4.0),)), 5)
        assert grid.spacings[0] == pytest.approx(1.0)
        op = assemble(coeffs_1d(a=0.5), grid)
        dense = op.matrix.toarray()
        assert dense.shape == (3, 3)
        assert np.allclose(np.diag(dense), 1.0)
        assert np.allclose(np.diag(dense, 1), -0.5)
        assert np.allclose(np.diag(dense, -1), -0.5)

    def test_reaction_shifts_diagonal(self):
        grid = build_grid(DomainSpec((1.0,), (np.exp(4.0),)), 5)
        base = assemble(coeffs_1d(a=0.5), grid).matrix.toarray()
        shifted = assemble(coeffs_1d(a=0.5, q=3.0), grid).matrix.toarray()
        assert np.allclose(shifted - base, 3.0 * np.eye(3))

    def test_symmetric_without_drift(self):
        grid = unit_grid_1d(31)
        op = assemble(coeffs_1d(a=0.3, q=0.1), grid)
        dense = op.matrix.toarray()
        assert np.max(np.abs(dense - dense.T)) <= 1e-12

    def test_dimension_mismatch(self):
        grid = unit_grid_1d()
        co = OperatorCoefficients(a=np.eye(2) * 0.1, b=np.zeros(2), q=0.0)
        with pytest.raises(ValueError, match="dimension"):
            assemble(co, grid)


class TestApply:
    def test_zero_maps_to_zero(self):
        op = assemble(coeffs_1d(0.4, 0.1, 0.2), unit_grid_1d(21))
        assert np.all(apply(op, np.zeros(op.size)) == 0.0)

    def test_shape_mismatch(self):
        op = assemble(coeffs_1d(), unit_grid_1d(21))
        with pytest.raises(ValueError, match="length"):
            apply(op, np.zeros(op.size + 1))

    def test_reaction_dominates_tiny_diffusion(self):
        grid = unit_grid_1d(41)
        op = assemble(coeffs_1d(a=1e-10, b=0.0, q=2.0), grid)
        xs = grid.axes[0][grid.interior]
        u = np.sin(np.pi * xs)  # smooth, zero at the ends
        out = apply(op, u)
        inner = slice(5, -5)
        assert np.allclose(out[inner], 2.0 * u[inner], atol=1e-8)

    def test_shifted_quadratic_form_nonnegative(self):
        rng = np.random.default_rng(42)
        grid = unit_grid_1d(31)
        op = assemble(coeffs_1d(a=0.2, b=0.5, q=-0.3), grid)
        c1 = monotonicity_shift(op)
        for _ in range(50):
            u = rng.normal(size=op.size)
            quad = float(u @ apply(op, u)) + c1 * float(u @ u)
            assert quad >= -1e-9 * float(u @ u)


class TestCrossDerivative:
    def test_mixed_term_on_bilinear_function(self):
        dom = DomainSpec((np.exp(-1.0), np.exp(-1.0)), (np.exp(1.0), np.exp(1.0)))
        grid = build_grid(dom, (21, 21))
        a12 = 0.015
        co = OperatorCoefficients(
            a=np.array([[0.05, a12], [a12, 0.05]]), b=np.zeros(2), q=0.0)
        op = assemble(co, grid)
        mesh = grid.coordinate_mesh()
        u_full = mesh[..., 0] * mesh[..., 1]
        u_full[~grid.interior] = 0.0
        out = grid.embed(apply(op, grid.restrict(u_full)))
        # analytic value: -sum_ij a_ij d2(x1 x2) = -2 a12; exact in the interior
        # because central differences are exact on bilinear functions
        center = out[8:13, 8:13]
        assert np.allclose(center, -2 * a12, atol=1e-12)


class TestConsistencyOrder:
    def analytic_apply(self, co, mesh):
        lo, hi = mesh[..., 0].min(), mesh[..., 0].max()
        w = np.pi / (hi - lo)
        s0, s1 = (np.sin(w * (mesh[..., i] - lo)) for i in (0, 1))
        c0, c1 = (np.cos(w * (mesh[..., i] - lo)) for i in (0, 1))
        u = s0 * s1
        lap = -(w**2) * u
        val = -(co.a[0, 0] * lap + co.a[1, 1] * lap
                + 2 * co.a[0, 1] * w**2 * c0 * c1)
        val += co.b[0] * w * c0 * s1 + co.b[1] * w * s0 * c1 + co.q * u
        return u, val

    def test_second_order_on_sine_products(self):
        co = OperatorCoefficients(
            a=np.array([[0.04, 0.012], [0.012, 0.06]]),
            b=np.array([0.02, -0.01]), q=0.05)
        dom = DomainSpec((50.0, 50.0), (200.0, 200.0))
        errors, hs = [], []
        for nodes in (17, 33, 65):
            grid = build_grid(dom, (nodes, nodes))
            mesh = grid.coordinate_mesh()
            u_full, exact = self.analytic_apply(co, mesh)
            got = grid.embed(apply(assemble(co, grid), grid.restrict(u_full)))
            err = np.max(np.abs((got - exact)[grid.interior]))
            errors.append(err)
            hs.append(grid.spacings[0])
        slopes = np.diff(np.log(errors)) / np.diff(np.log(hs))
        assert np.all(np.abs(slopes - 2.0) <= 0.1)


class TestCommutator:
    def test_scalar_multiple_commutes(self):
        grid = unit_grid_1d(41)
        op1 = assemble(coeffs_1d(a=0.3, b=0.2, q=0.1), grid)
        op2 = DiscreteOperator(matrix=2.0 * op1.matrix, grid=grid, coeffs=op1.coeffs)
        assert commutator_norm(op1, op2) <= 1e-12

    def test_pure_diffusion_pair_commutes(self):
        grid = unit_grid_1d(41)
        op1 = assemble(coeffs_1d(a=0.3), grid)
        op2 = assemble(coeffs_1d(a=0.7), grid)
        norm1 = spectral_norm(op1.matrix)
        assert commutator_norm(op1, op2) <= 1e-12 * norm1**2

    def test_different_mix_localized_at_boundary(self):
        grid = unit_grid_1d(31)
        op1 = assemble(coeffs_1d(a=0.3, b=0.0), grid)
        op2 = assemble(coeffs_1d(a=0.3, b=0.4), grid)
        comm = (op1.matrix @ op2.matrix - op2.matrix @ op1.matrix).toarray()
        assert np.max(np.abs(comm)) > 0
        k = comm.shape[0]
        interior_block = comm[2:k - 2, 2:k - 2]
        assert np.max(np.abs(interior_block)) <= 1e-12 * np.max(np.abs(comm))

    def test_normalized_commutator_bounded_under_refinement(self):
        ratios = []
        for nodes in (17, 33, 65):
            grid = unit_grid_1d(nodes)
            op1 = assemble(coeffs_1d(a=0.3, b=0.0), grid)
            op2 = assemble(coeffs_1d(a=0.3, b=0.4), grid)
            scale = spectral_norm(op1.matrix) * spectral_norm(op2.matrix)
            ratios.append(commutator_norm(op1, op2) / scale)
        assert ratios[0] < 1.0
        assert ratios[1] <= ratios[0]
        assert ratios[2] <= ratios[1]


class TestPowerIteration:
    def test_matches_dense_spectral_norm(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            m = rng.normal(size=(40, 40))
            assert spectral_norm(m, iters=300) == pytest.approx(
                np.linalg.norm(m, 2), rel=1e-6)


class TestModelCoefficients:
    def test_from_model_instant(self):
        m = MarketModel.build(sigma=[0.2, 0.3], rho=[[1.0, 0.5], [0.5, 1.0]],
                              r=0.05, m=0.01, d=0.02)
        co = OperatorCoefficients.from_model(m, 0.3)
        assert co.a[0, 0] == pytest.approx(0.02)
        assert co.a[0, 1] == pytest.approx(0.5 * 0.2 * 0.3 / 2)
        assert co.b[0] == pytest.approx(0.02 - 0.04)
        assert co.q == pytest.approx(0.07)

    def test_from_averaged_matches_constant_model(self):
        m = MarketModel.build(sigma=0.25, r=0.03)
        avg = averaged_operator_coeffs(m, 0, 1)
        co_avg = OperatorCoefficients.from_averaged(avg)
        co_inst = OperatorCoefficients.from_model(m, 0.5)
        assert np.allclose(co_avg.a, co_inst.a, atol=1e-15)
        assert np.allclose(co_avg.b, co_inst.b, atol=1e-15)
        assert co_avg.q == pytest.approx(co_inst.q, abs=1e-15)
