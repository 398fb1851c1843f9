"""
Truncated backpropagation through time for the sequence-to-one SRN.

deltas[n] is delta(k - n) = dE/da at step T - n, a stack of row vectors
with one row per sequence:

    delta(T)     = (dE/do  w_out^T) diag(f'(a(T)))
    delta(T - n) = delta(T - n + 1) w_rec^T diag(f'(a(T - n)))

Parameter gradients sum the per-step contributions over depths 0..h and
are averaged over the sequences of the batch.
"""
from dataclasses import dataclass

import torch

from utils import linalg
from utils.utils import NumericalError, ShapeError


@dataclass
class BpttConfig:
    h: int  # truncation depth

    def validate(self, steps):
        if self.h < 1:
            raise ValueError(f"truncation depth h must be at least 1, got {self.h}")
        if self.h > steps:
            raise ValueError(f"truncation depth h={self.h} exceeds sequence length T={steps}")


@dataclass
class BpttResult:
    deltas: list  # h + 1 tensors of shape (N, n_hid)
    grads: dict  # w_in, w_rec, w_out, b; batch means
    delta_norms: torch.Tensor  # (h + 1, N)
    gw_in_norms: torch.Tensor  # (h + 1, N), |dE/dw_in(k - n)|
    gw_rec_norms: torch.Tensor  # (h + 1, N), |dE/dw_rec(k - n)|

    @property
    def h(self):
        return len(self.deltas) - 1

    @property
    def top(self):
        return self.deltas[0]

    @property
    def deep(self):
        return self.deltas[-1]


def jacobian(params, fprime_n):
    """J(n) as it acts on row deltas: w_rec^T diag(f'(a(n))); a stack of diagonals gives a stack of matrices"""
    if fprime_n.shape[-1] != params.n_hid:
        raise ShapeError(f"jacobian: diagonal of length {fprime_n.shape[-1]} for {params.n_hid} hidden units")
    return linalg.scale_cols_by(params.w_rec.T, fprime_n)


def top_delta(params, trace, output_delta):
    if output_delta.shape != trace.y.shape:
        raise ShapeError(f"output delta {tuple(output_delta.shape)} does not match output {tuple(trace.y.shape)}")
    return linalg.hadamard(linalg.row_vec_mat(output_delta, params.w_out.T), trace.derivative(trace.steps))


def backward(params, trace, output_delta, cfg):
    n_steps = trace.steps
    cfg.validate(n_steps)
    n_seq = trace.batch_size

    grads = {
        "w_in": linalg.zeros(params.n_in, params.n_hid),
        "w_rec": linalg.zeros(params.n_hid, params.n_hid),
        "w_out": linalg.outer(trace.state(n_steps), output_delta),
        "b": linalg.zeros(params.n_hid),
    }
    deltas, delta_norms, gw_in_norms, gw_rec_norms = [], [], [], []

    delta = top_delta(params, trace, output_delta)
    for n in range(cfg.h + 1):
        step = n_steps - n
        if not torch.isfinite(delta).all():
            raise NumericalError(f"non-finite delta at depth {n}")
        deltas.append(delta)
        norm = linalg.norm2(delta)
        delta_norms.append(norm)

        if step >= 1:
            u_k, z_prev = trace.input(step), trace.state(step - 1)
            grads["w_in"] += linalg.outer(u_k, delta)
            grads["w_rec"] += linalg.outer(z_prev, delta)
            grads["b"] += delta.sum(dim=0)
            # |outer(a, b)|_F = |a| |b|
            gw_in_norms.append(linalg.norm2(u_k) * norm)
            gw_rec_norms.append(linalg.norm2(z_prev) * norm)
        else:
            # delta(0) is dE/dz(0); no weights feed the initial state
            gw_in_norms.append(torch.zeros_like(norm))
            gw_rec_norms.append(torch.zeros_like(norm))

        if n < cfg.h:
            delta = linalg.hadamard(linalg.row_vec_mat(delta, params.w_rec.T), trace.derivative(step - 1))

    for name in grads:
        grads[name] = grads[name] / n_seq

    return BpttResult(
        deltas=deltas,
        grads=grads,
        delta_norms=torch.stack(delta_norms),
        gw_in_norms=torch.stack(gw_in_norms),
        gw_rec_norms=torch.stack(gw_rec_norms),
    )


def delta_norm_profile(result):
    """(depth, mean |delta(k - n)|) pairs for n = 0..h"""
    return [(n, float(norms.mean())) for n, norms in enumerate(result.delta_norms)]
