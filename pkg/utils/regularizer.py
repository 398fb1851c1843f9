"""
Sampling-based gradient regularization.

For a candidate recurrent-weight correction dw_rec the first-order change
of S = 1/2 |delta(k - h)|^2 is dS = (g, dg), where

    g  = delta(k - h)^T, the top delta pushed through h factors w_rec^T D
    dg = sum over i of the same product with the i-th w_rec swapped for dw_rec

Both are taken at the current activation pattern: D_n and delta(k) are
held fixed. The gate accepts or skips a minibatch from dS and the
Q-factor log10(|delta(k)| / |delta(k - h)|).
"""
import math
from dataclasses import dataclass

import torch

from models import forward, output_loss
from utils import linalg
from utils.bptt import BpttConfig, backward
from utils.utils import ConfigError, ShapeError


ACCEPT = "Accept"
REJECT_LARGE_DS = "RejectLargeDs"
REJECT_Q_DIRECTION = "RejectQDirection"

R0_MODES = ("relative", "absolute")
Q_ORIENTATIONS = ("prose", "literal")


@dataclass
class RegConfig:
    q_min: float = -1.0
    q_max: float = 1.0
    # Threshold on |dS|: r0 * S in relative mode, r0 itself in absolute mode
    r0: float = 0.5
    r0_mode: str = "relative"
    h: int = 0
    # prose: the gate sees -Q so that values below q_min mean a vanishing deep delta
    q_orientation: str = "prose"

    def validate(self):
        if not self.q_min < self.q_max:
            raise ConfigError(f"regularizer.q_min: must be below q_max={self.q_max}, got {self.q_min}")
        if not self.r0 > 0:
            raise ConfigError(f"regularizer.r0: must be positive, got {self.r0}")
        if self.r0_mode not in R0_MODES:
            raise ConfigError(f"regularizer.r0_mode: must be one of {R0_MODES}, got '{self.r0_mode}'")
        if self.q_orientation not in Q_ORIENTATIONS:
            raise ConfigError(f"regularizer.q_orientation: must be one of {Q_ORIENTATIONS}, got '{self.q_orientation}'")
        if self.h < 0:
            raise ConfigError(f"regularizer.h: must be non-negative, got {self.h}")
        return self

    def threshold(self, s=None):
        if self.r0_mode == "absolute":
            return self.r0
        if s is None:
            raise ValueError("relative r0 threshold needs the current S")
        return self.r0 * s

    def oriented(self, q):
        return -q if self.q_orientation == "prose" else q


@dataclass
class RegReport:
    g: torch.Tensor
    dg: torch.Tensor
    dS: float
    S: float
    q: float  # log10(|delta(k)| / |delta(k - h)|)
    gate_q: float  # value the gate compared against [q_min, q_max]
    top_norm: float
    deep_norm: float
    decision: str

    @property
    def accepted(self):
        return self.decision == ACCEPT


def _check_depth(trace, h):
    if h < 0 or h > trace.steps:
        raise ValueError(f"depth h={h} outside [0, T={trace.steps}]")


def compute_g(params, trace, delta_top, h):
    """delta(k - h)^T as the product of D w_rec factors applied to delta(k)"""
    _check_depth(trace, h)
    if delta_top.shape[-1] != params.n_hid:
        raise ShapeError(f"compute_g: top delta {tuple(delta_top.shape)} for {params.n_hid} hidden units")
    g = delta_top
    for n in range(1, h + 1):
        g = linalg.hadamard(linalg.row_vec_mat(g, params.w_rec.T), trace.derivative(trace.steps - n))
    return g


def compute_dg(params, trace, delta_top, dw_rec, h):
    """Directional differential of g along dw_rec, accumulated factor by factor"""
    _check_depth(trace, h)
    if h < 1:
        raise ValueError("compute_dg needs h >= 1")
    if dw_rec.shape != params.w_rec.shape:
        raise ShapeError(f"compute_dg: dw_rec {tuple(dw_rec.shape)} does not match w_rec {tuple(params.w_rec.shape)}")
    g = delta_top
    dg = torch.zeros_like(delta_top)
    for n in range(1, h + 1):
        d = trace.derivative(trace.steps - n)
        dg = linalg.hadamard(linalg.row_vec_mat(dg, params.w_rec.T) + linalg.row_vec_mat(g, dw_rec.T), d)
        g = linalg.hadamard(linalg.row_vec_mat(g, params.w_rec.T), d)
    return dg


def _batch_mean(v):
    return v.mean(dim=0) if v.dim() == 2 else v


def norm_functional(params, trace, delta_top, h, w_rec=None):
    """S = 1/2 |mean delta(k - h)|^2 with the activation pattern of 'trace' held fixed"""
    if w_rec is not None:
        params = params.with_w_rec(w_rec)
    g = _batch_mean(compute_g(params, trace, delta_top, h))
    return 0.5 * float(linalg.dot(g, g))


def q_factor(norm_top, norm_deep):
    """log10(norm_top / norm_deep); a zero deep norm gives +inf, a zero top norm -inf"""
    norm_top, norm_deep = float(norm_top), float(norm_deep)
    if norm_deep <= 0:
        return math.inf
    if norm_top <= 0:
        return -math.inf
    return math.log10(norm_top) - math.log10(norm_deep)


def gate(ds, q, cfg, s=None):
    if abs(ds) > cfg.threshold(s):
        return REJECT_LARGE_DS
    if cfg.q_min <= q <= cfg.q_max:
        return ACCEPT
    if (q < cfg.q_min and ds > 0) or (q > cfg.q_max and ds < 0):
        return ACCEPT
    return REJECT_Q_DIRECTION


def build_report(params, trace, result, cfg, candidate_dw_rec):
    """Gate report from an existing forward/backward pass; touches no weights"""
    h = result.h
    g = _batch_mean(compute_g(params, trace, result.top, h))
    if h >= 1:
        dg = _batch_mean(compute_dg(params, trace, result.top, candidate_dw_rec, h))
    else:
        dg = torch.zeros_like(g)
    s = 0.5 * float(linalg.dot(g, g))
    ds = float(linalg.dot(g, dg))
    top_norm = float(result.delta_norms[0].mean())
    deep_norm = float(result.delta_norms[-1].mean())
    q = q_factor(top_norm, deep_norm)
    gate_q = cfg.oriented(q)
    return RegReport(
        g=g,
        dg=dg,
        dS=ds,
        S=s,
        q=q,
        gate_q=gate_q,
        top_norm=top_norm,
        deep_norm=deep_norm,
        decision=gate(ds, gate_q, cfg, s),
    )


def resolve_depth(h, steps):
    """h = 0 stands for the full horizon T - 1"""
    return max(1, steps - 1) if h == 0 else h


def evaluate_minibatch(params, batch, cfg, candidate_dw_rec):
    trace = forward(params, batch.inputs)
    loss = output_loss(trace, batch.targets, params.loss_kind, batch.spec.success_tolerance)
    result = backward(params, trace, loss.output_delta, BpttConfig(h=resolve_depth(cfg.h, trace.steps)))
    return build_report(params, trace, result, cfg, candidate_dw_rec)


def audit_gate(metrics, cfg):
    """Iterations of a regularized run that were applied although the gate would reject them"""
    violations = []
    for row in metrics.itertuples(index=False):
        if not row.applied or row.forced:
            continue
        if gate(row.dS, row.gate_q, cfg, row.S) != ACCEPT:
            violations.append(int(row.iter))
    return violations
