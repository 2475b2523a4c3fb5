import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smlvolterra.tensor import (
    DenseKernel,
    KernelSizeError,
    RankOneKernel,
    flatten_index,
    kron,
    load_kernel_csv,
    materialize,
    save_kernel_csv,
    tensor_inner,
    tensor_norm,
    tensor_power,
    unflatten_index,
)


# --- kron -----------------------------------------------------------------

def test_kron_identity_case():
    assert kron([1.0], [2.5]).tolist() == [2.5]


def test_kron_small():
    assert kron([1, 2], [3, 4]).tolist() == [3, 4, 6, 8]


@pytest.mark.parametrize("na,nb", [(1, 1), (2, 5), (7, 3)])
def test_kron_length_and_layout(na, nb):
    rng = np.random.default_rng(na * 10 + nb)
    a, b = rng.standard_normal(na), rng.standard_normal(nb)
    out = kron(a, b)
    assert out.size == na * nb
    for p, q in itertools.product(range(na), range(nb)):
        assert out[p * nb + q] == a[p] * b[q]


@pytest.mark.parametrize("a,b", [([], [1.0]), ([1.0], [])])
def test_kron_rejects_empty(a, b):
    with pytest.raises(ValueError):
        kron(a, b)


def test_kron_associative_exact_on_integers():
    rng = np.random.default_rng(3)
    a, b, c = (rng.integers(-50, 50, n).astype(float) for n in (3, 4, 2))
    np.testing.assert_array_equal(kron(kron(a, b), c), kron(a, kron(b, c)))


def test_kron_associative_floats_to_rounding():
    rng = np.random.default_rng(3)
    a, b, c = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2)
    # (a*b)*c and a*(b*c) differ by at most one rounding each
    np.testing.assert_allclose(kron(kron(a, b), c), kron(a, kron(b, c)), rtol=4.5e-16, atol=0)


# --- tensor_power ----------------------------------------------------------

def test_tensor_power_scalar():
    assert tensor_power([1.5], 3).tolist() == [1.5**3]


def test_tensor_power_small():
    assert tensor_power([1, 2], 2).tolist() == [1, 2, 2, 4]


def test_tensor_power_matches_kron():
    u = np.random.default_rng(0).standard_normal(5)
    np.testing.assert_array_equal(tensor_power(u, 2), kron(u, u))


def test_tensor_power_rejects_order_zero():
    with pytest.raises(ValueError):
        tensor_power([1.0, 2.0], 0)


# --- materialize -----------------------------------------------------------

def test_materialize_order_one_is_identity():
    w = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(materialize(RankOneKernel(w[None])).coefficients, w)


def test_materialize_unit_vectors():
    k = RankOneKernel.from_vectors([[1, 0], [0, 1]])
    assert materialize(k).coefficients.tolist() == [0, 1, 0, 0]


def test_materialize_entries_are_factor_products():
    rng = np.random.default_rng(1)
    k = RankOneKernel(rng.standard_normal((3, 4)))
    dense = materialize(k)
    for idx in itertools.product(range(4), repeat=3):
        expected = k.factors[0, idx[0]] * k.factors[1, idx[1]] * k.factors[2, idx[2]]
        assert dense[idx] == expected


def test_materialize_contraction_matches_product_of_firs():
    rng = np.random.default_rng(2)
    k = RankOneKernel(rng.standard_normal((3, 4)))
    u = rng.standard_normal(4)
    dense_out = tensor_power(u, 3) @ materialize(k).coefficients
    product = np.prod(k.factors @ u)
    assert dense_out == pytest.approx(product, rel=1e-12)


def test_materialize_refuses_huge_kernels():
    with pytest.raises(KernelSizeError):
        materialize(RankOneKernel(np.ones((8, 10))))


def test_dense_kernel_rejects_wrong_length():
    with pytest.raises(ValueError):
        DenseKernel(2, 3, np.zeros(8))


def test_rank_one_rejects_empty():
    with pytest.raises(ValueError):
        RankOneKernel(np.zeros((0, 3)))


# --- inner products and norms ---------------------------------------------

def test_inner_with_zero():
    rng = np.random.default_rng(4)
    t = DenseKernel(2, 3, rng.standard_normal(9))
    assert tensor_inner(t, DenseKernel.zeros(2, 3)) == 0.0


def test_inner_of_decomposables_factorizes():
    rng = np.random.default_rng(5)
    v = RankOneKernel(rng.standard_normal((2, 4)))
    w = RankOneKernel(rng.standard_normal((2, 4)))
    expected = (v.factors[0] @ w.factors[0]) * (v.factors[1] @ w.factors[1])
    assert tensor_inner(materialize(v), materialize(w)) == pytest.approx(expected, rel=1e-12)
    assert tensor_inner(v, w) == pytest.approx(expected, rel=1e-12)


def test_inner_double_loop_oracle():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    total = 0.0
    for i in range(3):
        for j in range(3):
            total += a[i, j] * b[i, j]
    got = tensor_inner(DenseKernel(2, 3, a.ravel()), DenseKernel(2, 3, b.ravel()))
    assert got == pytest.approx(total, rel=1e-13)


def test_inner_shape_mismatch():
    with pytest.raises(ValueError):
        tensor_inner(DenseKernel.zeros(2, 3), DenseKernel.zeros(2, 4))


def test_norm_zero_kernel():
    assert tensor_norm(DenseKernel.zeros(3, 2)) == 0.0


def test_norm_all_ones_2x2():
    assert tensor_norm(DenseKernel(2, 2, [1, 1, 1, 1])) == 2.0


def test_norm_cross_norm_identity():
    rng = np.random.default_rng(7)
    w = RankOneKernel(rng.standard_normal((2, 5)))
    expected = np.prod(np.linalg.norm(w.factors, axis=1))
    assert tensor_norm(materialize(w)) == pytest.approx(expected, rel=1e-12)


# --- flattening ------------------------------------------------------------

def test_flatten_row_major():
    assert flatten_index((1, 2, 0), 3) == 1 * 9 + 2 * 3 + 0
    assert unflatten_index(15, 3, 3) == (1, 2, 0)


@pytest.mark.parametrize("order,memory", [(1, 1), (1, 7), (2, 5), (3, 4), (4, 3), (6, 2)])
def test_flatten_bijective(order, memory):
    seen = set()
    for idx in itertools.product(range(memory), repeat=order):
        flat = flatten_index(idx, memory)
        assert unflatten_index(flat, order, memory) == idx
        seen.add(flat)
    assert seen == set(range(memory**order))


def test_flatten_out_of_range():
    with pytest.raises(IndexError):
        flatten_index((0, 3), 3)
    with pytest.raises(IndexError):
        unflatten_index(9, 2, 3)


# --- file format -----------------------------------------------------------

def test_kernel_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    k = DenseKernel(2, 3, rng.standard_normal(9))
    path = tmp_path / "k.csv"
    save_kernel_csv(k, path)
    assert path.read_text().splitlines()[0] == "order,memory"
    back = load_kernel_csv(path)
    assert (back.order, back.memory) == (2, 3)
    np.testing.assert_array_equal(back.coefficients, k.coefficients)


def test_kernel_csv_wrong_count(tmp_path):
    path = tmp_path / "k.csv"
    path.write_text("order,memory\n2,2\n1\n2\n3\n")
    with pytest.raises(ValueError):
        load_kernel_csv(path)


# --- properties ------------------------------------------------------------

shapes = st.tuples(st.integers(1, 4), st.integers(1, 6))


@settings(max_examples=200, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_cross_norm_property(shape, seed):
    k, m = shape
    w = RankOneKernel(np.random.default_rng(seed).standard_normal((k, m)))
    expected = np.prod(np.linalg.norm(w.factors, axis=1))
    assert abs(tensor_norm(materialize(w)) - expected) <= 1e-10 * expected


@settings(max_examples=100, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_rank_one_materialization_has_rank_one(shape, seed):
    k, m = shape
    if k == 1:
        return
    w = RankOneKernel(np.random.default_rng(seed).standard_normal((k, m)))
    mat = materialize(w).coefficients.reshape(m, m ** (k - 1))
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size > 1:
        assert sv[1] <= 1e-10 * sv[0]
