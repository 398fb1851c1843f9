"""
Gradient-flow diagnostics: norms of backpropagated deltas and of the
per-step weight-gradient contributions as a function of depth, and
per-iteration traces of delta norms and activation statistics.
"""
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
import tqdm
from torch.utils.data import DataLoader

from models import forward, output_loss
from utils import linalg
from utils.bptt import BpttConfig, backward
from utils.logger import FLOAT_FORMAT, Logger


@dataclass
class DepthProfile:
    delta_norm: torch.Tensor  # (h + 1,) mean |delta(k - n)|
    gw_in_norm: torch.Tensor  # (h + 1,) mean |dE/dw_in(k - n)|
    gw_rec_norm: torch.Tensor  # (h + 1,) mean |dE/dw_rec(k - n)|

    @property
    def h(self):
        return self.delta_norm.shape[0] - 1

    def end_start_ratio(self):
        start = float(self.delta_norm[0])
        return float(self.delta_norm[-1]) / start if start > 0 else math.nan

    def to_frame(self):
        return pd.DataFrame(
            {
                "depth": np.arange(self.h + 1),
                "delta_norm": self.delta_norm.numpy(),
                "gwin_norm": self.gw_in_norm.numpy(),
                "gwrec_norm": self.gw_rec_norm.numpy(),
            }
        )

    def save(self, path):
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)


def depth_scan(params, probes, h, batch_size=100, progress=False):
    """Averages per-depth norms of deltas and weight-gradient contributions over the probe sequences"""
    if h > probes.T:
        raise ValueError(f"scan depth h={h} exceeds probe sequence length T={probes.T}")
    loader = DataLoader(probes, batch_size=batch_size, shuffle=False, collate_fn=probes.collate_fn)

    totals = [linalg.zeros(h + 1) for _ in range(3)]
    for inputs, targets in tqdm.tqdm(loader, desc="Scanning depths", disable=not progress):
        trace = forward(params, inputs)
        loss = output_loss(trace, targets, params.loss_kind, probes.spec.success_tolerance)
        result = backward(params, trace, loss.output_delta, BpttConfig(h=h))
        for total, norms in zip(totals, (result.delta_norms, result.gw_in_norms, result.gw_rec_norms)):
            total += norms.sum(dim=1)
    n_probes = len(probes)
    return DepthProfile(*(total / n_probes for total in totals))


def correlation_check(profile):
    """
    Smallest Pearson correlation between the log delta-norm curve and the two
    log weight-gradient curves, over depths where all three are positive.
    Degenerate input (fewer than two usable depths, a flat curve) gives NaN.
    """
    curves = [c.numpy() for c in (profile.delta_norm, profile.gw_in_norm, profile.gw_rec_norm)]
    usable = np.logical_and.reduce([c > 0 for c in curves])
    if usable.sum() < 2:
        tqdm.tqdm.write("---- WARNING: correlation check needs at least two depths with non-zero norms")
        return math.nan
    logs = [np.log10(c[usable]) for c in curves]
    if any(np.ptp(curve) == 0 for curve in logs):
        tqdm.tqdm.write("---- WARNING: correlation check got a flat curve")
        return math.nan
    return float(min(np.corrcoef(logs[0], logs[1])[0, 1], np.corrcoef(logs[0], logs[2])[0, 1]))


def activation_stats(trace):
    a = trace.a.reshape(-1)
    return {
        "act_mean": float(a.mean()),
        "act_median": float(torch.quantile(a, 0.5)),
        "act_abs_median": float(torch.quantile(a.abs(), 0.5)),
    }


DYNAMICS_COLUMNS = [
    "iter",
    "delta_norm_d0",
    "delta_norm_dmid",
    "delta_norm_dh",
    "act_mean",
    "act_median",
    "act_abs_median",
    "decision",
    "applied",
]


class DynamicsRecorder(object):
    """Trainer hook collecting one row per iteration: delta norms at depths 0, h // 2, h and activation statistics"""

    def __init__(self, path=None):
        self.logger = Logger(path, columns=DYNAMICS_COLUMNS) if path else None
        self.rows = []

    def record_dynamics(self, iteration):
        result = iteration.bptt
        h = result.h
        row = {
            "iter": iteration.step,
            "delta_norm_d0": float(result.delta_norms[0].mean()),
            "delta_norm_dmid": float(result.delta_norms[h // 2].mean()),
            "delta_norm_dh": float(result.delta_norms[h].mean()),
        }
        row.update(activation_stats(iteration.trace))
        row["decision"] = iteration.report.decision if iteration.report is not None else ""
        row["applied"] = iteration.applied
        self.rows.append(row)
        if self.logger is not None:
            self.logger.list_of_scalars_summary([(k, v) for k, v in row.items() if k != "iter"], row["iter"])

    __call__ = record_dynamics

    def close(self):
        if self.logger is not None:
            self.logger.close()

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=DYNAMICS_COLUMNS)

    def small_gradient_fraction(self, threshold=1e-7):
        """Share of iterations whose deepest delta norm fell below 'threshold'"""
        if not self.rows:
            return 0.0
        return sum(row["delta_norm_dh"] < threshold for row in self.rows) / len(self.rows)
