"""Graded operator bases for the noise expansion of the O-operator.

The O-operator is expanded in powers of the driving noise; the order-k term
needs a fixed set of time-independent matrices O_j^(k).  This module builds
those sets, either from the known closed forms per family or by closing the
span of {L} under the maps generated by the consistency condition:

    same order:   X -> [H, X]   and   X -> [L^dag B, X]  (orders add)
    raise k->k+1: X -> [L, X]
    lower k->k-1: Y -> L^dag Y

Within each order the working basis is orthonormalized (Frobenius inner
product) in discovery order, so coefficient equations are well conditioned
and reproducible.  Raw, human-readable representatives are kept alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BasisMismatchError,
    ClosureDivergedError,
    InvalidParameterError,
)
from .models import ModelSpec, build_angular_momentum, embed_site, sigma_minus, sigma_z

_RANK_TOL = 1e-10


@dataclass
class OBasis:
    """Per-order operator sets for one model.

    orders[k] is the orthonormal working basis used by the kernel machinery;
    raw_orders[k] holds natural (not normalized) representatives for
    reporting.  table_counts are the symmetry-reduced span dimensions, which
    for the qubit family reproduce the published count table; they can be
    smaller than len(orders[k]) when the working basis keeps a redundant
    but conventional listing (the two-qubit case).
    """

    family: str
    dim: int
    orders: list[list[np.ndarray]]
    raw_orders: list[list[np.ndarray]]
    table_counts: tuple[int, ...]
    params: dict = field(default_factory=dict)

    @property
    def k_max(self) -> int:
        return len(self.orders) - 1

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(o) for o in self.orders)


def _vec(op: np.ndarray) -> np.ndarray:
    return op.reshape(-1)


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.vdot(a, b))


def orthonormalize(ops: list[np.ndarray], tol: float = _RANK_TOL) -> list[np.ndarray]:
    """Modified Gram-Schmidt in listing order; drops dependent elements."""
    out: list[np.ndarray] = []
    scale = max((np.linalg.norm(op) for op in ops), default=1.0)
    for op in ops:
        v = op.astype(complex).copy()
        for _ in range(2):  # re-orthogonalize once for numerical safety
            for e in out:
                v -= np.vdot(e, v) * e
        norm = np.linalg.norm(v)
        if norm > tol * max(scale, 1.0):
            out.append(v / norm)
    return out


def span_residual(ops: list[np.ndarray], span: list[np.ndarray]) -> float:
    """Largest relative distance of any op from the given orthonormal span."""
    worst = 0.0
    for op in ops:
        v = _vec(op.astype(complex))
        r = v.copy()
        for e in span:
            r -= np.vdot(_vec(e), v) * _vec(e)
        denom = np.linalg.norm(v)
        if denom > 0:
            worst = max(worst, np.linalg.norm(r) / denom)
    return worst


class _GradedSpan:
    """Orthonormal span per order with incremental rank growth."""

    def __init__(self, dim: int, k_max: int):
        self.dim = dim
        self.basis: list[list[np.ndarray]] = [[] for _ in range(k_max + 1)]
        self.raw: list[list[np.ndarray]] = [[] for _ in range(k_max + 1)]
        self.scale = 1.0

    def add(self, k: int, op: np.ndarray) -> bool:
        norm0 = np.linalg.norm(op)
        self.scale = max(self.scale, norm0)
        if norm0 <= 1e-12 * self.scale:
            return False
        v = _vec(op).astype(complex).copy()
        for _ in range(2):
            for e in self.basis[k]:
                v -= np.vdot(e, v) * e
        norm = np.linalg.norm(v)
        if norm <= _RANK_TOL * norm0:
            return False
        if len(self.basis[k]) >= self.dim * self.dim:
            raise ClosureDivergedError(f"order {k} span exceeded operator space")
        self.basis[k].append(v / norm)
        self.raw[k].append(op.copy())
        return True

    def matrices(self, k: int) -> list[np.ndarray]:
        return [e.reshape(self.dim, self.dim) for e in self.basis[k]]


def closure_discover(
    model: ModelSpec,
    k_max: int,
    max_sweeps: int = 60,
) -> tuple[list[list[np.ndarray]], list[list[np.ndarray]]]:
    """Close the span of {L} under the consistency-condition maps.

    Returns (orders, raw_orders): per-order orthonormal matrices and the raw
    candidates that introduced each direction.  Deterministic: candidates
    are generated in a fixed sweep order until a global fixed point.
    """
    h = model.hamiltonian
    lop = model.coupling
    ldag = lop.conj().T
    dim = model.dim
    span = _GradedSpan(dim, k_max)
    span.add(0, lop)

    def sweep() -> bool:
        changed = False
        for k in range(k_max + 1):
            # lowering images from order k+1
            if k + 1 <= k_max:
                for y in span.matrices(k + 1):
                    changed |= span.add(k, ldag @ y)
            # Hamiltonian map within order k
            for x in span.matrices(k):
                changed |= span.add(k, h @ x - x @ h)
            # bilinear maps with orders adding to k
            for a in range(k + 1):
                b = k - a
                for bm in span.matrices(a):
                    lb = ldag @ bm
                    for x in span.matrices(b):
                        changed |= span.add(k, lb @ x - x @ lb)
            # raising from order k-1
            if k >= 1:
                for x in span.matrices(k - 1):
                    changed |= span.add(k, lop @ x - x @ lop)
        return changed

    for _ in range(max_sweeps):
        if not sweep():
            break
    else:
        raise ClosureDivergedError("closure did not reach a fixed point")
    orders = [span.matrices(k) for k in range(k_max + 1)]
    raw = [list(span.raw[k]) for k in range(k_max + 1)]
    # drop trailing empty orders
    while len(orders) > 1 and not orders[-1]:
        orders.pop()
        raw.pop()
    return orders, raw


def qubit_table_counts(n: int) -> tuple[int, ...]:
    """Closed-form per-order span sizes for N qubits with collective L.

    m(N, k) = m(N-1, k-1) for k >= 1 and m(N, 0) = m(N-2, 0) + N with
    m(1, 0) = 1; the top order is k = N-1 with a single element.
    """
    if n < 1:
        raise InvalidParameterError("need at least one qubit")
    m0 = {0: 0, 1: 1}
    for j in range(2, n + 1):
        m0[j] = m0[j - 2] + j
    return tuple(m0[n - k] for k in range(n))


def basis_ncavity(model: ModelSpec) -> OBasis:
    """Order-0 basis {a_j}: the O-operator is noise independent."""
    if model.family != "ncavity":
        raise InvalidParameterError("expected an ncavity model")
    from .models import boson_annihilator

    dims = model.space.factor_dims
    n = len(dims)
    a_site = boson_annihilator(dims[0] - 1)
    raw = [embed_site(a_site, j, dims) for j in range(n)]
    return OBasis(
        family="ncavity",
        dim=model.dim,
        orders=[orthonormalize(raw)],
        raw_orders=[raw],
        table_counts=(n,),
        params=dict(model.params),
    )


def basis_angular(model: ModelSpec) -> OBasis:
    """Spin-l basis O_j^(k) = J_z^(j-1) J_-^(k+1), j = 1..2l-k, k = 0..2l-1."""
    if model.family != "angular":
        raise InvalidParameterError("expected an angular momentum model")
    l = model.params["l"]
    two_l = round(2 * l)
    jz, _, jm = build_angular_momentum(l)
    raw_orders: list[list[np.ndarray]] = []
    orders: list[list[np.ndarray]] = []
    for k in range(two_l):
        jm_pow = np.linalg.matrix_power(jm, k + 1)
        raw = []
        for j in range(1, two_l - k + 1):
            raw.append(np.linalg.matrix_power(jz, j - 1) @ jm_pow)
        on = orthonormalize(raw)
        if len(on) != len(raw):
            raise BasisMismatchError(
                f"angular order {k}: expected {len(raw)} independent elements"
            )
        raw_orders.append(raw)
        orders.append(on)
    return OBasis(
        family="angular",
        dim=model.dim,
        orders=orders,
        raw_orders=raw_orders,
        table_counts=tuple(two_l - k for k in range(two_l)),
        params=dict(model.params),
    )


def _two_qubit_raw_lists() -> tuple[list[np.ndarray], list[np.ndarray]]:
    dims = (2, 2)
    sm = sigma_minus()
    sz = sigma_z()
    sm_a = embed_site(sm, 0, dims)
    sm_b = embed_site(sm, 1, dims)
    sz_a = embed_site(sz, 0, dims)
    sz_b = embed_site(sz, 1, dims)
    order0 = [sm_a, sm_b, sz_a @ sm_b, sm_a @ sz_b]
    order1 = [sm_a @ sm_b]
    return order0, order1


def basis_nqubit(model: ModelSpec) -> OBasis:
    """Qubit-family basis; per-order table counts must match the recurrences.

    For one and two qubits the conventional explicit listings are used as
    the working basis (two qubits: four order-0 operators plus one order-1,
    which span the same dynamics as the two-element symmetric order-0 span
    counted in the table).  For N >= 3 the working basis is discovered by
    closure and its sizes are required to equal the table row.
    """
    if model.family != "nqubit":
        raise InvalidParameterError("expected an nqubit model")
    n = len(model.space.factor_dims)
    expected = qubit_table_counts(n)
    if n == 1:
        raw_orders = [[sigma_minus()]]
        orders = [orthonormalize(raw_orders[0])]
    elif n == 2:
        o0, o1 = _two_qubit_raw_lists()
        raw_orders = [o0, o1]
        orders = [orthonormalize(o0), orthonormalize(o1)]
        if tuple(len(o) for o in orders) != (4, 1):
            raise BasisMismatchError("two-qubit explicit listing is degenerate")
    else:
        orders, raw_orders = closure_discover(model, k_max=n - 1)
        got = tuple(len(o) for o in orders)
        if got != expected:
            raise BasisMismatchError(
                f"closure counts {got} do not match table row {expected}"
            )
    # the symmetry-reduced counts must match the table for every N
    sym_orders, _ = closure_discover(model, k_max=n - 1)
    sym_counts = tuple(len(o) for o in sym_orders)
    if sym_counts != expected:
        raise BasisMismatchError(
            f"symmetric closure counts {sym_counts} differ from table {expected}"
        )
    return OBasis(
        family="nqubit",
        dim=model.dim,
        orders=orders,
        raw_orders=raw_orders,
        table_counts=expected,
        params=dict(model.params),
    )


def build_basis(model: ModelSpec) -> OBasis:
    if model.family == "ncavity":
        return basis_ncavity(model)
    if model.family == "angular":
        return basis_angular(model)
    if model.family == "nqubit":
        return basis_nqubit(model)
    raise InvalidParameterError(f"unknown family {model.family!r}")
