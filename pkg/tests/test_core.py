import numpy as np
import pytest

from memdelay.core import (
    GridError,
    HistoryFunction,
    KernelDomainError,
    MemoryKernel,
    ShapeError,
    TimeGrid,
    Trajectory,
    convolve_memory,
    eval_kernel,
    eval_kernel_derivative,
    history_from_json,
    history_to_json,
    kernel_from_json,
    kernel_to_json,
)


def make_traj(grid, fn, dim=1):
    t = grid.times()
    samples = np.stack([np.atleast_1d(fn(tk)) for tk in t])
    return Trajectory(grid, samples, lead=0)


class TestTimeGrid:
    def test_for_horizon(self):
        g = TimeGrid.for_horizon(1.0, 200, 0.1)
        assert g.n_steps == 200
        assert g.delay_steps == 20
        assert g.h == pytest.approx(0.1, rel=1e-14)

    def test_rejects_misaligned_delay(self):
        with pytest.raises(GridError):
            TimeGrid.for_horizon(1.0, 200, 0.1037)

    def test_rejects_fractional_ratio(self):
        # h/dt = 12.5
        with pytest.raises(GridError):
            TimeGrid.for_horizon(1.0, 100, 0.125)
        # but an aligned one passes
        TimeGrid.for_horizon(1.0, 160, 0.125)

    def test_index_of(self):
        g = TimeGrid.for_horizon(2.0, 100, 0.5)
        assert g.index_of(0.0) == 0
        assert g.index_of(2.0) == 100
        with pytest.raises(GridError):
            g.index_of(0.013)


class TestEvalKernel:
    def test_constant_any_t(self):
        G = np.array([[1.0, 2.0], [3.0, 4.0]])
        k = MemoryKernel.constant(G)
        for t in (0.0, 0.7, 5.0):
            assert np.allclose(eval_kernel(k, t), G)

    def test_exp_poly_at_zero(self):
        k = MemoryKernel.exp_poly(-1.0, 1.0)
        assert eval_kernel(k, 0.0)[0, 0] == pytest.approx(1.0)

    def test_exp_poly_halving_time(self):
        k = MemoryKernel.exp_poly(-1.0, 1.0)
        assert eval_kernel(k, np.log(2.0))[0, 0] == pytest.approx(0.5, rel=1e-14)

    def test_negative_argument_rejected(self):
        k = MemoryKernel.exp_poly(-1.0, 1.0)
        with pytest.raises(KernelDomainError):
            eval_kernel(k, -0.1)

    def test_sampled_range_and_interpolation(self):
        vals = np.array([1.0, 0.5, 0.25]).reshape(-1, 1, 1)
        k = MemoryKernel.sampled(0.5, vals)
        assert eval_kernel(k, 0.25)[0, 0] == pytest.approx(0.75)
        with pytest.raises(KernelDomainError):
            eval_kernel(k, 1.5)

    def test_exp_poly_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        coeffs = rng.normal(size=(3, 2, 2))
        a = -0.8
        k = MemoryKernel.exp_poly(a, coeffs)
        for t in rng.uniform(0.0, 3.0, size=100):
            direct = np.exp(a * t) * sum(coeffs[j] * t**j for j in range(3))
            got = eval_kernel(k, t)
            assert np.max(np.abs(got - direct)) <= 1e-12 * max(1.0, np.max(np.abs(direct)))

    def test_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        k = MemoryKernel.exp_poly(-0.6, rng.normal(size=(2, 3, 3)))
        eps = 1e-6
        for t in (0.3, 1.1, 2.0):
            fd = (eval_kernel(k, t + eps) - eval_kernel(k, t - eps)) / (2 * eps)
            assert np.allclose(eval_kernel_derivative(k, t), fd, atol=1e-8)


class TestConvolveMemory:
    def test_zero_trajectory(self):
        grid = TimeGrid.for_horizon(1.0, 50, 0.1)
        traj = make_traj(grid, lambda t: 0.0)
        k = MemoryKernel.exp_poly(-1.0, 1.0)
        for idx in (0, 10, 50):
            assert np.all(convolve_memory(traj, k, idx) == 0.0)

    def test_constant_state_exponential_kernel(self):
        # int_0^1 e^-(1-s) * c ds = c (1 - e^-1); trapezoid error is O(dt^2)
        c = 2.5
        grid = TimeGrid.for_horizon(1.0, 400, 0.1)
        traj = make_traj(grid, lambda t: c)
        k = MemoryKernel.exp_poly(-1.0, 1.0)
        got = convolve_memory(traj, k, 400)[0]
        exact = c * (1 - np.exp(-1.0))
        assert got == pytest.approx(exact, abs=5 * grid.dt**2)

    def test_linear_state_constant_kernel_exact(self):
        # trapezoid integrates s exactly: int_0^1 s ds = 1/2
        grid = TimeGrid.for_horizon(1.0, 64, 0.25)
        traj = make_traj(grid, lambda t: t)
        k = MemoryKernel.constant(1.0)
        assert convolve_memory(traj, k, 64)[0] == pytest.approx(0.5, rel=1e-13)

    def test_second_order_against_refined_quadrature(self):
        # halving dt divides the error against a 10x-refined oracle by ~4
        k = MemoryKernel.exp_poly(-0.5, np.array([0.3, 0.7]))
        fn = lambda t: np.cos(1.3 * t)

        def kernel_scalar(t):
            return np.exp(-0.5 * t) * (0.3 + 0.7 * t)

        def error_at(n_steps):
            grid = TimeGrid.for_horizon(1.0, n_steps, 0.25)
            traj = make_traj(grid, fn)
            got = convolve_memory(traj, k, n_steps)[0]
            s = np.linspace(0.0, 1.0, 10 * n_steps + 1)
            oracle = np.trapezoid(kernel_scalar(1.0 - s) * np.cos(1.3 * s), s)
            return abs(got - oracle)

        e1, e2 = error_at(40), error_at(80)
        assert 3.5 <= e1 / e2 <= 4.5

    def test_dimension_mismatch(self):
        grid = TimeGrid.for_horizon(1.0, 20, 0.1)
        traj = Trajectory(grid, np.zeros((21, 3)), lead=0)
        k = MemoryKernel.constant(np.eye(2))
        with pytest.raises(ShapeError):
            convolve_memory(traj, k, 5)

    def test_scalar_kernel_broadcasts(self):
        grid = TimeGrid.for_horizon(1.0, 40, 0.1)
        traj = Trajectory(grid, np.ones((41, 3)), lead=0)
        k = MemoryKernel.constant(1.0)
        got = convolve_memory(traj, k, 40)
        assert np.allclose(got, 1.0)  # int_0^1 1 ds per component


class TestHistory:
    def test_sample_count_and_interpolation(self):
        hist = HistoryFunction(np.array([[0.0], [1.0], [2.0]]), h=1.0)
        assert hist.delay_steps == 2
        assert hist(-0.75)[0] == pytest.approx(0.5)
        assert hist(0.0)[0] == pytest.approx(2.0)

    def test_outside_window_rejected(self):
        hist = HistoryFunction.constant(1.0, h=0.5, delay_steps=5)
        with pytest.raises(ValueError):
            hist(-0.6)
        with pytest.raises(ValueError):
            hist(0.1)

    def test_zero_before_final(self):
        hist = HistoryFunction.zero_before_final([2.0, 3.0], h=0.2, delay_steps=4)
        assert hist.vanishes_before_final()
        assert np.allclose(hist.values[-1], [2.0, 3.0])


class TestJsonRoundTrip:
    @pytest.mark.parametrize("kernel", [
        MemoryKernel.zero(3),
        MemoryKernel.constant(np.array([[1.0, 0.5], [0.0, 2.0]])),
        MemoryKernel.exp_poly(-1.0, np.arange(8.0).reshape(2, 2, 2)),
        MemoryKernel.sampled(0.25, np.linspace(1.0, 0.0, 5).reshape(-1, 1, 1)),
    ])
    def test_kernel_round_trip(self, kernel):
        back = kernel_from_json(kernel_to_json(kernel))
        assert back.form == kernel.form
        assert back.dim == kernel.dim
        assert np.allclose(back.coeffs, kernel.coeffs)
        for t in (0.0, 0.3, 1.0):
            assert np.allclose(eval_kernel(back, t), eval_kernel(kernel, t))

    def test_history_round_trip(self):
        hist = HistoryFunction(np.array([[1.0, 2.0], [0.5, 0.0], [0.0, 1.0]]), h=0.4)
        back = history_from_json(history_to_json(hist))
        assert back.h == hist.h
        assert np.allclose(back.values, hist.values)
