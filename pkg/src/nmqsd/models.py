"""System Hamiltonians and coupling operators for the three model families.

Conventions fixed here and relied on everywhere else:

* qubits: site 1 is the leftmost tensor factor, basis ordered as
  |b_1 b_2 ... b_N> with b in {0, 1} and |1> the excited state, so the
  single-site sigma_z is diag(-1, +1) and sigma_- maps |1> to |0>.
* angular momentum: basis ordered by descending magnetic quantum number,
  J_z = diag(l, l-1, ..., -l); level 1 in observable names is the top.
* cavities: per-mode Fock spaces truncated at n_max photons, |0> first.

All operators are dense complex arrays; the total dimension is capped so
nothing here ever needs sparse storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidModelError, InvalidParameterError, UnsupportedSizeError

MAX_DIM = 128
_HERM_TOL = 1e-12


@dataclass(frozen=True)
class HilbertSpace:
    """Tensor-product structure of the system space."""

    factor_dims: tuple[int, ...]

    @property
    def dim(self) -> int:
        out = 1
        for d in self.factor_dims:
            out *= d
        return out


@dataclass
class ModelSpec:
    """A concrete open-system model: H_sys, the bath coupling L, and labels.

    family is one of 'nqubit', 'angular', 'ncavity'.  params keeps the raw
    constructor arguments so configs can be echoed into run manifests.
    """

    family: str
    space: HilbertSpace
    hamiltonian: np.ndarray
    coupling: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.space.dim

    def validate(self) -> None:
        d = self.space.dim
        if self.hamiltonian.shape != (d, d) or self.coupling.shape != (d, d):
            raise InvalidModelError("operator shape does not match Hilbert space")
        if np.linalg.norm(self.hamiltonian - self.hamiltonian.conj().T) > _HERM_TOL * max(
            1.0, np.linalg.norm(self.hamiltonian)
        ):
            raise InvalidModelError("Hamiltonian is not Hermitian")
        if not (np.isfinite(self.hamiltonian).all() and np.isfinite(self.coupling).all()):
            raise InvalidModelError("model operators contain non-finite entries")


def _check_dim(dim: int) -> None:
    if dim > MAX_DIM:
        raise UnsupportedSizeError(
            f"system dimension {dim} exceeds dense cap {MAX_DIM}"
        )


def sigma_z() -> np.ndarray:
    return np.diag([-1.0, 1.0]).astype(complex)


def sigma_minus() -> np.ndarray:
    out = np.zeros((2, 2), dtype=complex)
    out[0, 1] = 1.0
    return out


def embed_site(op: np.ndarray, site: int, factor_dims: tuple[int, ...]) -> np.ndarray:
    """Place a single-factor operator at position `site` (0-based, leftmost=0)."""
    if not 0 <= site < len(factor_dims):
        raise InvalidParameterError(f"site {site} out of range")
    out = np.eye(1, dtype=complex)
    for j, d in enumerate(factor_dims):
        out = np.kron(out, op if j == site else np.eye(d, dtype=complex))
    return out


def build_angular_momentum(l: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin-l matrices (J_z, J_+, J_-) in the descending-m basis.

    l may be integer or half-integer; 2l must be a nonnegative integer.
    """
    two_l = round(2 * l)
    if abs(2 * l - two_l) > 1e-12 or two_l < 0:
        raise InvalidParameterError(f"l={l} is not a half-integer")
    dim = two_l + 1
    _check_dim(dim)
    m = l - np.arange(dim)  # descending: l, l-1, ..., -l
    jz = np.diag(m).astype(complex)
    jp = np.zeros((dim, dim), dtype=complex)
    for i in range(1, dim):
        # raises m[i] to m[i]+1 = m[i-1]
        jp[i - 1, i] = np.sqrt(l * (l + 1) - m[i] * (m[i] + 1))
    jm = jp.conj().T
    return jz, jp, jm


def build_angular_model(l: float, omega: float = 1.0) -> ModelSpec:
    """Single spin-l: H = omega J_z, L = J_-."""
    jz, _, jm = build_angular_momentum(l)
    spec = ModelSpec(
        family="angular",
        space=HilbertSpace((jz.shape[0],)),
        hamiltonian=omega * jz,
        coupling=jm,
        params={"l": l, "omega": omega},
    )
    spec.validate()
    return spec


def build_nqubit_model(n: int, omega: float = 1.0) -> ModelSpec:
    """N qubits with identical splitting and collective lowering.

    H = (omega/2) sum_j sigma_z^(j),  L = sum_j sigma_-^(j).
    """
    if n < 1:
        raise InvalidParameterError("need at least one qubit")
    dims = (2,) * n
    _check_dim(2**n)
    h = np.zeros((2**n, 2**n), dtype=complex)
    lop = np.zeros_like(h)
    for j in range(n):
        h += 0.5 * omega * embed_site(sigma_z(), j, dims)
        lop += embed_site(sigma_minus(), j, dims)
    spec = ModelSpec(
        family="nqubit",
        space=HilbertSpace(dims),
        hamiltonian=h,
        coupling=lop,
        params={"n": n, "omega": omega},
    )
    spec.validate()
    return spec


def boson_annihilator(n_max: int) -> np.ndarray:
    """Truncated ladder operator, a|n> = sqrt(n)|n-1> for n <= n_max."""
    if n_max < 1:
        raise InvalidParameterError("n_max must be at least 1")
    dim = n_max + 1
    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, dim):
        a[n - 1, n] = np.sqrt(n)
    return a


def build_ncavity_model(
    n: int,
    omegas,
    lambdas,
    n_max: int = 2,
    topology: str = "ring",
) -> ModelSpec:
    """Coupled single-mode cavities with collective leakage L = sum_j a_j.

    H = sum_j [omega_j a_j^dag a_j
               + lambda_j (a_j^dag a_{j+1} + a_j a_{j+1}^dag)]
    with cavity N+1 identified with cavity 1 on a ring; an open chain drops
    the wrap-around coupling.  For n=1 no coupling term is generated.
    """
    if n < 1:
        raise InvalidParameterError("need at least one cavity")
    if topology not in ("ring", "chain"):
        raise InvalidParameterError(f"unknown topology {topology!r}")
    omegas = np.asarray(omegas, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if omegas.shape != (n,):
        raise InvalidParameterError(f"expected {n} mode frequencies")
    n_edges = 0 if n == 1 else (n if topology == "ring" else n - 1)
    if lambdas.shape != (n_edges,):
        raise InvalidParameterError(f"expected {n_edges} coupling strengths")
    dims = (n_max + 1,) * n
    _check_dim(dims[0] ** n)
    a_site = boson_annihilator(n_max)
    a_ops = [embed_site(a_site, j, dims) for j in range(n)]
    h = np.zeros((dims[0] ** n, dims[0] ** n), dtype=complex)
    lop = np.zeros_like(h)
    for j in range(n):
        h += omegas[j] * (a_ops[j].conj().T @ a_ops[j])
        lop += a_ops[j]
    if n >= 2:
        pairs = range(n) if topology == "ring" else range(n - 1)
        for j in pairs:
            k = (j + 1) % n
            hop = a_ops[j].conj().T @ a_ops[k]
            h += lambdas[j] * (hop + hop.conj().T)
    spec = ModelSpec(
        family="ncavity",
        space=HilbertSpace(dims),
        hamiltonian=h,
        coupling=lop,
        params={
            "n": n,
            "omegas": omegas.tolist(),
            "lambdas": lambdas.tolist(),
            "n_max": n_max,
            "topology": topology,
        },
    )
    spec.validate()
    return spec


def excitation_numbers(model: ModelSpec) -> np.ndarray:
    """Integer excitation count of each computational basis state.

    The excitation operator is diagonal in the standard basis for all three
    families; the bath coupling lowers it by exactly one.  Used by the exact
    oracles to enumerate conserved subspaces.
    """
    if model.family == "nqubit":
        n = len(model.space.factor_dims)
        levels = np.zeros(model.dim, dtype=int)
        for j in range(n):
            bit = (np.arange(model.dim) >> (n - 1 - j)) & 1
            levels += bit
        return levels
    if model.family == "angular":
        dim = model.dim
        # descending m: index 0 is the top level with 2l excitations
        return (dim - 1) - np.arange(dim)
    if model.family == "ncavity":
        dims = model.space.factor_dims
        levels = np.zeros(model.dim, dtype=int)
        idx = np.arange(model.dim)
        for j, d in enumerate(dims):
            stride = int(np.prod(dims[j + 1 :], dtype=int)) if j + 1 < len(dims) else 1
            levels += (idx // stride) % d
        return levels
    raise InvalidModelError(f"unknown family {model.family!r}")
