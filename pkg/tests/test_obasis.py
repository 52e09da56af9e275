"""Operator-basis construction: counts, closure, and span equality."""

import numpy as np
import pytest

from nmqsd import (
    InvalidParameterError,
    build_angular_model,
    build_ncavity_model,
    build_nqubit_model,
    build_basis,
    closure_discover,
    qubit_table_counts,
    span_residual,
)

QUBIT_TABLE = {
    1: (1,),
    2: (2, 1),
    3: (4, 2, 1),
    4: (6, 4, 2, 1),
    5: (9, 6, 4, 2, 1),
    6: (12, 9, 6, 4, 2, 1),
    7: (16, 12, 9, 6, 4, 2, 1),
}


def test_qubit_closed_form_table():
    for n, row in QUBIT_TABLE.items():
        assert qubit_table_counts(n) == row
    with pytest.raises(InvalidParameterError):
        qubit_table_counts(0)


def test_qubit_recurrences():
    for n in range(2, 8):
        row, prev = qubit_table_counts(n), qubit_table_counts(n - 1)
        assert row[1:] == prev
    for n in range(3, 8):
        assert qubit_table_counts(n)[0] == qubit_table_counts(n - 2)[0] + n


def test_qubit_closure_counts_small():
    for n in range(1, 5):
        model = build_nqubit_model(n, 1.0)
        orders, _ = closure_discover(model, k_max=n - 1)
        assert tuple(len(o) for o in orders) == QUBIT_TABLE[n]


def test_qubit_basis_top_order_single_element():
    model = build_nqubit_model(3, 1.0)
    basis = build_basis(model)
    assert basis.k_max == 2
    top = basis.raw_orders[2][0]
    # the unique top-order element is proportional to L^(k_max+1) image
    lop = model.coupling
    cube = lop @ lop @ lop
    overlap = abs(np.vdot(top, cube)) / (np.linalg.norm(top) * np.linalg.norm(cube))
    assert overlap > 1 - 1e-10


def test_two_qubit_conventional_listing():
    basis = build_basis(build_nqubit_model(2, 1.0))
    assert basis.counts == (4, 1)
    assert basis.table_counts == (2, 1)


def test_angular_counts_and_span_equality():
    model = build_angular_model(2.0, 1.0)
    basis = build_basis(model)
    assert basis.counts == (4, 3, 2, 1)
    discovered, _ = closure_discover(model, k_max=3)
    assert tuple(len(o) for o in discovered) == (4, 3, 2, 1)
    for k in range(4):
        assert span_residual(discovered[k], basis.orders[k]) <= 1e-9
        assert span_residual(basis.raw_orders[k], discovered[k]) <= 1e-9


def test_angular_half_integer_counts():
    basis = build_basis(build_angular_model(1.5, 1.0))
    assert basis.counts == (3, 2, 1)
    # spin-1/2 is the single qubit
    basis = build_basis(build_angular_model(0.5, 1.0))
    assert basis.counts == (1,)


def test_ncavity_counts():
    for n in (1, 2, 3):
        model = build_ncavity_model(
            n, [1.0] * n, [0.1] * (n if n > 1 else 0), n_max=2)
        basis = build_basis(model)
        assert basis.counts == (n,)
        assert basis.k_max == 0


def test_orthonormal_working_basis():
    for model in (
        build_nqubit_model(3, 1.0),
        build_angular_model(2.0, 1.0),
        build_ncavity_model(2, [1.0, 1.1], [0.2], n_max=2, topology="chain"),
    ):
        basis = build_basis(model)
        for ops in basis.orders:
            for i, a in enumerate(ops):
                for j, b in enumerate(ops):
                    want = 1.0 if i == j else 0.0
                    assert abs(np.vdot(a, b) - want) < 1e-10


def test_span_residual_detects_outside_vector():
    basis = build_basis(build_nqubit_model(1, 1.0))
    sigma_plus = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
    assert span_residual([sigma_plus], basis.orders[0]) > 0.9
