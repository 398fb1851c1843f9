import pytest
import torch
from torch.testing import assert_close

from utils import linalg
from utils.utils import ShapeError


def test_matmul_rejects_mismatched_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        linalg.matmul(linalg.zeros(2, 3), linalg.zeros(2, 3))


def test_row_vec_mat_single_and_stacked():
    m = linalg.as_tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    v = linalg.as_tensor([1.0, 0.0, -1.0])
    assert_close(linalg.row_vec_mat(v, m), linalg.as_tensor([-4.0, -4.0]))
    stack = torch.stack([v, 2 * v])
    assert_close(linalg.row_vec_mat(stack, m), linalg.as_tensor([[-4.0, -4.0], [-8.0, -8.0]]))


def test_row_vec_mat_batched_matrices():
    m = torch.randn(3, 4, 2, dtype=linalg.DTYPE)
    v = torch.randn(3, 4, dtype=linalg.DTYPE)
    expected = torch.stack([v[i] @ m[i] for i in range(3)])
    assert_close(linalg.row_vec_mat(v, m), expected)


def test_scale_cols_by_is_right_diagonal_product():
    m = torch.randn(3, 3, dtype=linalg.DTYPE)
    d = torch.randn(3, dtype=linalg.DTYPE)
    assert_close(linalg.scale_cols_by(m, d), m @ linalg.diag_matrix(d))
    stack = torch.randn(2, 3, dtype=linalg.DTYPE)
    scaled = linalg.scale_cols_by(m, stack)
    assert scaled.shape == (2, 3, 3)
    assert_close(scaled[1], m @ linalg.diag_matrix(stack[1]))


def test_outer_sums_over_stack():
    a = torch.randn(5, 3, dtype=linalg.DTYPE)
    b = torch.randn(5, 2, dtype=linalg.DTYPE)
    expected = sum(torch.outer(a[i], b[i]) for i in range(5))
    assert_close(linalg.outer(a, b), expected)


def test_vector_helpers():
    a = linalg.as_tensor([3.0, 4.0])
    b = linalg.as_tensor([1.0, 2.0])
    assert float(linalg.norm2(a)) == 5.0
    assert float(linalg.dot(a, b)) == 11.0
    assert_close(linalg.axpy(2.0, b, a), linalg.as_tensor([5.0, 8.0]))
    assert_close(linalg.hadamard(a, b), linalg.as_tensor([3.0, 8.0]))
    assert_close(linalg.sub(a, b), linalg.as_tensor([2.0, 2.0]))
    assert_close(linalg.elementwise(torch.tanh, linalg.zeros(2)), linalg.zeros(2))
    with pytest.raises(ShapeError):
        linalg.dot(a, linalg.zeros(3))
    with pytest.raises(ShapeError):
        linalg.add(a, linalg.zeros(3))


def loop_matmul(a, b):
    rows, inner = a.shape
    cols = b.shape[1]
    out = linalg.zeros(rows, cols)
    for i in range(rows):
        for j in range(cols):
            total = 0.0
            for k in range(inner):
                total += float(a[i, k]) * float(b[k, j])
            out[i, j] = total
    return out


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 4, 2), (5, 1, 6), (7, 7, 7)])
def test_matmul_matches_triple_loop(shape):
    rows, inner, cols = shape
    generator = torch.Generator().manual_seed(rows * 100 + inner * 10 + cols)
    a = torch.randn(rows, inner, generator=generator, dtype=linalg.DTYPE)
    b = torch.randn(inner, cols, generator=generator, dtype=linalg.DTYPE)
    assert_close(linalg.matmul(a, b), loop_matmul(a, b), rtol=1e-12, atol=1e-14)


def test_matmul_is_associative():
    generator = torch.Generator().manual_seed(4)
    a, b, c = (torch.randn(n, m, generator=generator, dtype=linalg.DTYPE) for n, m in ((4, 6), (6, 3), (3, 5)))
    assert_close(linalg.matmul(linalg.matmul(a, b), c), linalg.matmul(a, linalg.matmul(b, c)), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("length", [1, 10, 100, 1000, 10000])
def test_squared_norm_equals_self_dot(length):
    v = torch.randn(length, generator=torch.Generator().manual_seed(length), dtype=linalg.DTYPE)
    assert float(linalg.norm2(v)) ** 2 == pytest.approx(float(linalg.dot(v, v)), rel=1e-12)
