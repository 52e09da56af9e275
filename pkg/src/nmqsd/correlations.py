"""Bath correlation functions and colored-noise path sampling.

The driving process z_t is a complex Gaussian with

    M[z_t] = 0,   M[z_t z_s] = 0,   M[z_t* z_s] = alpha(t, s),

sampled on a uniform grid.  Every trajectory owns a counter-based RNG
stream keyed by (master seed, stream index), so ensembles are reproducible
independent of scheduling or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCorrelationError, InvalidParameterError

_PSD_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*dt, i = 0..n_steps (n_steps+1 samples)."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0 or not np.isfinite(self.dt):
            raise InvalidParameterError("dt must be positive and finite")
        if self.n_steps < 1:
            raise InvalidParameterError("need at least one step")

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_points)

    def trapezoid_weights(self, upto: int) -> np.ndarray:
        """Trapezoid weights over [t_0, t_upto]; a single point integrates to 0."""
        w = np.full(upto + 1, self.dt)
        w[0] *= 0.5
        w[-1] *= 0.5
        if upto == 0:
            w[0] = 0.0
        return w


def make_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based per-trajectory stream; (seed, index) is the full key."""
    key = np.array([seed % 2**64, index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoisePath:
    """One sampled driving path on a grid, plus the nonlinear-mode shift.

    samples[i] holds z(t_i).  shift is filled causally during nonlinear
    integration (integral of alpha*(t,s) <L^dag>_s) and is zero otherwise.
    """

    grid: TimeGrid
    samples: np.ndarray
    shift: np.ndarray | None = None

    def __post_init__(self):
        if self.samples.shape != (self.grid.n_points,):
            raise InvalidParameterError("sample count does not match grid")

    def shifted(self) -> np.ndarray:
        if self.shift is None:
            return self.samples
        return self.samples + self.shift


class CorrelationFunction:
    """Interface: alpha(t, s) plus exact path sampling on a grid."""

    def alpha(self, t, s):
        """Correlation M[z_t* z_s]; broadcasts over array arguments."""
        raise NotImplementedError

    def exp_modes(self) -> tuple[np.ndarray, np.ndarray]:
        """(weights w_k, rates mu_k) with alpha(t,s) = sum_k w_k e^{-mu_k (t-s)}
        valid for t >= s.  Lets memory integrals update recursively."""
        raise NotImplementedError

    def sample_block(self, grid: TimeGrid, seed: int, indices) -> np.ndarray:
        """Sample z paths for the given stream indices; shape (len, n_points)."""
        raise NotImplementedError

    def sample_path(self, grid: TimeGrid, seed: int, index: int = 0) -> NoisePath:
        return NoisePath(grid, self.sample_block(grid, seed, [index])[0])


@dataclass(frozen=True)
class OrnsteinUhlenbeck(CorrelationFunction):
    """alpha(t,s) = (gamma/2) exp(-gamma |t-s|); memory time 1/gamma.

    z = x + i y with x, y independent real OU processes of stationary
    variance gamma/4, sampled by the exact AR(1) update, so the discrete
    covariance matches alpha at every lag with no dt bias.
    """

    gamma: float

    def __post_init__(self):
        if self.gamma <= 0 or not np.isfinite(self.gamma):
            raise InvalidParameterError("gamma must be positive and finite")

    def alpha(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return (self.gamma / 2.0) * np.exp(-self.gamma * np.abs(t - s)) + 0j

    def exp_modes(self):
        return (np.array([self.gamma / 2.0 + 0j]), np.array([self.gamma + 0j]))

    def sample_block(self, grid: TimeGrid, seed: int, indices) -> np.ndarray:
        indices = list(indices)
        n_pts = grid.n_points
        sigma = np.sqrt(self.gamma / 4.0)
        a = np.exp(-self.gamma * grid.dt)
        innov = sigma * np.sqrt(1.0 - a * a)
        # fixed draw layout per path: row 0 drives Re, row 1 drives Im;
        # column 0 is the stationary initial draw
        xi = np.empty((len(indices), 2, n_pts))
        for row, idx in enumerate(indices):
            xi[row] = make_stream(seed, idx).standard_normal((2, n_pts))
        comp = np.empty((len(indices), 2, n_pts))
        comp[:, :, 0] = sigma * xi[:, :, 0]
        for i in range(1, n_pts):
            comp[:, :, i] = a * comp[:, :, i - 1] + innov * xi[:, :, i]
        return comp[:, 0, :] + 1j * comp[:, 1, :]


@dataclass(frozen=True)
class DiscreteModes(CorrelationFunction):
    """Finite bath of modes: alpha(t,s) = sum_k |g_k|^2 e^{-i omega_k (t-s)}.

    Paths are z_t = -i sum_k g_k z_k* e^{i omega_k t} with z_k standard
    complex Gaussians (density e^{-|z|^2}/pi), i.e. smooth functions of t
    that can be re-evaluated exactly on any refined grid.
    """

    g: tuple
    omega: tuple

    def __post_init__(self):
        if len(self.g) != len(self.omega) or len(self.g) == 0:
            raise InvalidParameterError("need matching, nonempty g and omega")
        if not all(np.isfinite(complex(x)) for x in self.g):
            raise InvalidParameterError("couplings must be finite")
        # all-zero couplings are allowed: a decoupled bath drives nothing

    @property
    def g_arr(self) -> np.ndarray:
        return np.asarray(self.g, dtype=complex)

    @property
    def omega_arr(self) -> np.ndarray:
        return np.asarray(self.omega, dtype=float)

    def alpha(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        tau = (t - s)[..., None]
        return (np.abs(self.g_arr) ** 2 * np.exp(-1j * self.omega_arr * tau)).sum(
            axis=-1
        )

    def exp_modes(self):
        return (np.abs(self.g_arr) ** 2 + 0j, 1j * self.omega_arr)

    def draw_mode_amplitudes(self, seed: int, index: int) -> np.ndarray:
        xi = make_stream(seed, index).standard_normal((2, len(self.g)))
        return (xi[0] + 1j * xi[1]) / np.sqrt(2.0)

    def _block_from_amplitudes(self, grid: TimeGrid, zk: np.ndarray) -> np.ndarray:
        # elementwise product + axis reduction keeps the mode summation order
        # independent of the block size, so each index is bit-reproducible
        amp = self.g_arr * zk.conj()
        phases = np.exp(1j * np.outer(self.omega_arr, grid.times))
        return -1j * (amp[:, :, None] * phases[None]).sum(axis=1)

    def path_from_amplitudes(self, grid: TimeGrid, zk: np.ndarray) -> np.ndarray:
        return self._block_from_amplitudes(grid, zk[None])[0]

    def sample_block(self, grid: TimeGrid, seed: int, indices) -> np.ndarray:
        indices = list(indices)
        zk = np.empty((len(indices), len(self.g)), dtype=complex)
        for row, idx in enumerate(indices):
            zk[row] = self.draw_mode_amplitudes(seed, idx)
        return self._block_from_amplitudes(grid, zk)


def covariance_matrix(corr: CorrelationFunction, grid: TimeGrid) -> np.ndarray:
    t = grid.times
    c = corr.alpha(t[:, None], t[None, :])
    return np.asarray(c, dtype=complex)


def sample_block_cholesky(
    corr: CorrelationFunction, grid: TimeGrid, seed: int, indices
) -> np.ndarray:
    """Generic sampler for any correlation: factor C = M M^dag, z = conj(M) xi.

    Works for covariances that are only positive semidefinite; eigenvalues
    below -1e-10 (relative) mean the function is not a valid correlation.
    """
    c = covariance_matrix(corr, grid)
    if np.linalg.norm(c - c.conj().T) > 1e-10 * max(1.0, np.linalg.norm(c)):
        raise InvalidCorrelationError("covariance is not Hermitian")
    evals, vecs = np.linalg.eigh(c)
    scale = max(evals.max(), 1.0)
    if evals.min() < -_PSD_TOL * scale:
        raise InvalidCorrelationError(
            f"covariance has eigenvalue {evals.min():.3e}, below tolerance"
        )
    m = vecs * np.sqrt(np.clip(evals, 0.0, None))
    out = np.empty((len(list(indices)), grid.n_points), dtype=complex)
    for row, idx in enumerate(list(indices)):
        xi2 = make_stream(seed, idx).standard_normal((2, grid.n_points))
        xi = (xi2[0] + 1j * xi2[1]) / np.sqrt(2.0)
        out[row] = m.conj() @ xi
    return out


@dataclass
class MomentCheck:
    label: str
    estimate: complex
    target: complex
    stderr: float

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.target) <= 3.0 * self.stderr


def moment_suite(
    corr: CorrelationFunction,
    grid: TimeGrid,
    n_paths: int = 10000,
    seed: int = 1234,
    lag_indices=None,
) -> list[MomentCheck]:
    """Three-sigma checks of M[z]=0, M[zz]=0 and M[z* z]=alpha on a lag grid.

    Deterministic given (corr, grid, n_paths, seed); stderr is the empirical
    standard error of each sample mean.
    """
    paths = corr.sample_block(grid, seed, range(n_paths))
    t = grid.times
    if lag_indices is None:
        step = max(1, grid.n_steps // 4)
        lag_indices = list(range(0, grid.n_points, step))
    checks: list[MomentCheck] = []

    def _mean_check(label, samples, target):
        est = samples.mean()
        # standard error of a complex mean: sqrt(Var(Re)+Var(Im)) / sqrt(n)
        var = samples.real.var(ddof=1) + samples.imag.var(ddof=1)
        checks.append(MomentCheck(label, est, target, np.sqrt(var / n_paths)))

    for i in lag_indices:
        _mean_check(f"mean z(t={t[i]:.3g})", paths[:, i], 0.0)
    for i in lag_indices:
        for j in lag_indices:
            if j > i:
                continue
            _mean_check(
                f"M[z z] (t={t[i]:.3g}, s={t[j]:.3g})",
                paths[:, i] * paths[:, j],
                0.0,
            )
            _mean_check(
                f"M[z* z] (t={t[i]:.3g}, s={t[j]:.3g})",
                paths[:, i].conj() * paths[:, j],
                complex(corr.alpha(t[i], t[j])),
            )
    return checks
