"""
Dense linear algebra over float64 torch tensors.

Row-vector convention throughout: a Vec is a 1-D tensor, deltas are row
vectors multiplied on the right by matrices (delta @ w_rec.T), and a stack
of N row vectors is an (N, n) tensor that every vector operation accepts in
place of a single Vec. A Mat is a 2-D tensor.
"""
import torch

from utils.utils import ShapeError


DTYPE = torch.float64


def _shape(t):
    return tuple(t.shape)


def zeros(*shape):
    return torch.zeros(*shape, dtype=DTYPE)


def ones(*shape):
    return torch.ones(*shape, dtype=DTYPE)


def as_tensor(data):
    return torch.as_tensor(data, dtype=DTYPE)


def matmul(a, b):
    """Standard matrix product of an (m, n) and an (n, p) matrix"""
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {_shape(a)} by {_shape(b)}")
    return a @ b


def row_vec_mat(v, m):
    """Row vector (or stack of row vectors) times matrix: v^T m"""
    if m.dim() == 2:
        if v.dim() not in (1, 2) or v.shape[-1] != m.shape[0]:
            raise ShapeError(f"row_vec_mat: cannot multiply {_shape(v)} by {_shape(m)}")
        return v @ m
    # One matrix per row vector, as produced by a batched jacobian
    if v.dim() != 2 or m.dim() != 3 or m.shape[0] != v.shape[0] or m.shape[1] != v.shape[1]:
        raise ShapeError(f"row_vec_mat: cannot multiply {_shape(v)} by {_shape(m)}")
    return torch.bmm(v.unsqueeze(1), m).squeeze(1)


def scale_cols_by(m, d):
    """Right-multiplication by diag(d): result[..., i, j] = m[..., i, j] * d[..., j]"""
    if m.shape[-1] != d.shape[-1]:
        raise ShapeError(f"scale_cols_by: {_shape(m)} has {m.shape[-1]} columns, diagonal has {d.shape[-1]}")
    if m.dim() == 2 and d.dim() == 2:
        # Stack of diagonals against one matrix -> stack of matrices
        return m.unsqueeze(0) * d.unsqueeze(1)
    if m.dim() == 3 and d.dim() == 2:
        return m * d.unsqueeze(1)
    return m * d


def hadamard(v, d):
    """Row vector(s) times diag(d), i.e. elementwise product"""
    if v.shape != d.shape:
        raise ShapeError(f"hadamard: shape mismatch {_shape(v)} vs {_shape(d)}")
    return v * d


def diag_matrix(d):
    return torch.diag(d)


def dot(a, b):
    """Scalar product over the last dimension"""
    if a.shape != b.shape:
        raise ShapeError(f"dot: length mismatch {_shape(a)} vs {_shape(b)}")
    return (a * b).sum(dim=-1)


def norm2(v):
    """Euclidean norm over the last dimension"""
    return torch.linalg.vector_norm(v, ord=2, dim=-1)


def outer(a, b):
    """Outer product a^T b; stacks of vectors give summed outer products over the stack"""
    if a.dim() != b.dim() or a.dim() not in (1, 2):
        raise ShapeError(f"outer: incompatible operands {_shape(a)} and {_shape(b)}")
    if a.dim() == 1:
        return torch.outer(a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"outer: stack sizes differ {_shape(a)} vs {_shape(b)}")
    return a.T @ b


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {_shape(a)} vs {_shape(b)}")
    return a + b


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: shape mismatch {_shape(a)} vs {_shape(b)}")
    return a - b


def axpy(alpha, x, y):
    """alpha * x + y"""
    if x.shape != y.shape:
        raise ShapeError(f"axpy: shape mismatch {_shape(x)} vs {_shape(y)}")
    return y + alpha * x


def elementwise(fn, x):
    return fn(x)
