"""Trajectory steppers: convergence, invariants, and degenerate limits."""

import numpy as np
import pytest

from nmqsd import (
    DiscreteModes,
    OrnsteinUhlenbeck,
    TimeGrid,
    TrajectoryDivergedError,
    build_basis,
    build_nqubit_model,
    propagate_kernels,
    run_linear,
    run_nonlinear,
    step_linear,
)
from nmqsd.correlations import CorrelationFunction, NoisePath
from nmqsd.trajectories import run_linear_block, run_nonlinear_block

MODEL = build_nqubit_model(1, 1.0)
BASIS = build_basis(MODEL)
PSI0 = np.array([0.6, 0.8], dtype=complex)


def _mode_paths_on(grids, seed=7):
    """The same smooth noise realization evaluated on every grid."""
    corr = DiscreteModes((0.5, 0.3, 0.4), (0.7, 1.9, -0.6))
    zk = corr.draw_mode_amplitudes(seed=seed, index=0)
    return corr, [corr.path_from_amplitudes(g, zk) for g in grids]


def _state_error(hist, ref, stride):
    return np.abs(hist - ref[::stride]).max()


@pytest.mark.parametrize("mode", ["linear", "nonlinear"])
def test_heun_converges_at_order_two(mode):
    T = 2.0
    sizes = (50, 100, 200)
    fine = 1600
    grids = [TimeGrid(T / n, n) for n in (*sizes, fine)]
    corr, paths = _mode_paths_on(grids)

    hists = []
    for grid, z in zip(grids, paths):
        kern = propagate_kernels(MODEL, BASIS, corr, grid)
        if mode == "linear":
            hists.append(run_linear_block(kern, PSI0, z[None])[0])
        else:
            hists.append(run_nonlinear_block(kern, PSI0, z[None])[0][0])
    ref = hists[-1]
    errs = [
        _state_error(hists[i], ref, fine // n) for i, n in enumerate(sizes)
    ]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert min(orders) > 1.5, (errs, orders)


def test_nonlinear_norm_drift_within_step_error_bound():
    corr = OrnsteinUhlenbeck(1.0)
    grid = TimeGrid(0.02, 100)
    kern = propagate_kernels(MODEL, BASIS, corr, grid)
    z = corr.sample_block(grid, seed=13, indices=range(16))
    hist, drift, _ = run_nonlinear_block(kern, PSI0, z)
    assert drift.max() <= 10.0 * grid.dt**2
    norms = np.linalg.norm(hist, axis=2)
    assert np.abs(norms - 1.0).max() < 1e-12


def test_linear_run_records_norms_and_expectations():
    corr = OrnsteinUhlenbeck(0.7)
    grid = TimeGrid(0.02, 50)
    kern = propagate_kernels(MODEL, BASIS, corr, grid)
    traj = run_linear(kern, PSI0, corr.sample_path(grid, seed=3))
    assert traj.psi.shape == (grid.n_points, 2)
    assert np.allclose(traj.norms, np.linalg.norm(traj.psi, axis=1))
    # <L^dag> for a qubit: conj(psi_g) psi_e / |psi|^2
    i = 25
    expect = (traj.psi[i, 1].conj() * traj.psi[i, 0]) / traj.norms[i] ** 2
    assert np.isclose(traj.ldag_exp[i], expect)


def test_step_linear_composes_to_full_run():
    corr = OrnsteinUhlenbeck(0.9)
    grid = TimeGrid(0.05, 20)
    kern = propagate_kernels(MODEL, BASIS, corr, grid)
    path = corr.sample_path(grid, seed=8)
    full = run_linear_block(kern, PSI0, path.samples[None])[0]
    psi = PSI0 / np.linalg.norm(PSI0)
    for i in range(grid.n_steps):
        psi = step_linear(psi, i, path, kern)
        assert np.allclose(psi, full[i + 1], atol=1e-13)


def test_zero_coupling_reduces_to_hamiltonian_flow():
    corr = DiscreteModes((0.0,), (1.0,))
    grid = TimeGrid(0.01, 200)
    kern = propagate_kernels(MODEL, BASIS, corr, grid)
    z = np.zeros((1, grid.n_points), dtype=complex)
    hist = run_linear_block(kern, PSI0, z)[0]
    t = grid.times
    psi_n = PSI0 / np.linalg.norm(PSI0)
    # H = (omega/2) sigma_z: phases e^{+i t/2} (ground), e^{-i t/2} (excited)
    exact = np.stack(
        [psi_n[0] * np.exp(0.5j * t), psi_n[1] * np.exp(-0.5j * t)], axis=1)
    assert np.abs(hist - exact).max() < 1e-5
    # Heun is not unitary: norm moves only at the integrator-order rate
    assert np.abs(np.linalg.norm(hist, axis=1) - 1.0).max() < 1e-6


def test_dark_state_is_stationary():
    corr = OrnsteinUhlenbeck(1.0)
    grid = TimeGrid(0.02, 50)
    kern = propagate_kernels(MODEL, BASIS, corr, grid)
    ground = np.array([1.0, 0.0], dtype=complex)
    z = np.zeros((1, grid.n_points), dtype=complex)
    hist = run_linear_block(kern, ground, z)[0]
    # L|0> = 0 and Obar is proportional to the lowering operator, so
    # nothing ever leaks into the excited level
    pops = np.abs(hist) ** 2
    assert pops[:, 1].max() == 0.0
    assert np.abs(pops[:, 0] - 1.0).max() < 1e-6


def test_shift_kept_consistent_with_trajectory_average():
    # the recorded shift must equal the trapezoid of alpha*(t,s) <L^dag>_s
    corr = OrnsteinUhlenbeck(1.1)
    grid = TimeGrid(0.05, 30)
    kern = propagate_kernels(MODEL, BASIS, corr, grid)
    traj = run_nonlinear(kern, PSI0, corr.sample_path(grid, seed=21))
    t = grid.times
    for i in (10, 30):
        w = grid.trapezoid_weights(i)
        expect = np.sum(
            w * np.conj(np.asarray(corr.alpha(t[i], t[: i + 1])))
            * traj.ldag_exp[: i + 1]
        )
        assert abs(traj.shift[i] - expect) < 1e-12


def test_generic_correlation_falls_back_to_stored_history():
    class GenericOU(CorrelationFunction):
        def __init__(self, gamma):
            self.inner = OrnsteinUhlenbeck(gamma)

        def alpha(self, t, s):
            return self.inner.alpha(t, s)

        def sample_block(self, grid, seed, indices):
            return self.inner.sample_block(grid, seed, indices)

    gamma = 0.8
    grid = TimeGrid(0.02, 60)
    fast = OrnsteinUhlenbeck(gamma)
    slow = GenericOU(gamma)
    path = fast.sample_path(grid, seed=4)
    kern_fast = propagate_kernels(MODEL, BASIS, fast, grid)
    kern_slow = propagate_kernels(MODEL, BASIS, slow, grid)
    a = run_nonlinear(kern_fast, PSI0, path)
    b = run_nonlinear(kern_slow, PSI0, NoisePath(grid, path.samples))
    assert np.abs(a.psi - b.psi).max() < 1e-10
    assert np.abs(a.shift - b.shift).max() < 1e-10


def test_divergence_detected():
    # omega*dt = 2.4 sits inside the RK4 stability region (kernels fine)
    # but outside Heun's, so the state grows until it overflows
    wild = build_nqubit_model(1, 6.0)
    corr = OrnsteinUhlenbeck(0.3)
    grid = TimeGrid(0.4, 4000)
    kern = propagate_kernels(wild, build_basis(wild), corr, grid)
    z = np.zeros((1, grid.n_points), dtype=complex)
    with pytest.raises(TrajectoryDivergedError):
        run_linear_block(kern, PSI0, z)
