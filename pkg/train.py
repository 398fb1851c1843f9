import collections
import datetime
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import pandas as pd
import torch
import tqdm
from terminaltables import AsciiTable

from models import forward, init_gaussian, output_loss
from test import evaluate
from utils import linalg
from utils.bptt import BpttConfig, backward
from utils.datasets import make_splits
from utils.diagnostics import DynamicsRecorder
from utils.logger import Logger, write_table
from utils.parse_config import ArgumentParser, add_common_args, load_run_config
from utils.regularizer import (
    ACCEPT,
    REJECT_LARGE_DS,
    REJECT_Q_DIRECTION,
    build_report,
    resolve_depth,
)
from utils.utils import NumericalError, derive_seed, make_generator, make_run_dir, run_command


@dataclass
class TrainState:
    params: object
    velocity: dict
    generator: torch.Generator
    step: int = 0
    epoch: int = 0
    best_params: object = None
    best_accuracy: float = -1.0
    best_epoch: int = 0
    # Minibatches waiting to be drawn; rejected ones go back to the end
    queue: collections.deque = field(default_factory=collections.deque)


@dataclass
class IterationResult:
    step: int
    epoch: int
    applied: bool
    forced: bool
    loss: float
    report: object
    trace: object
    bptt: object


@dataclass
class TrainSummary:
    test_accuracy: float
    best_valid_accuracy: float
    best_epoch: int
    corrections: int
    draws: int
    forced: int
    params: object
    init_params: object
    metrics: pd.DataFrame


def init_state(params, cfg):
    return TrainState(
        params=params,
        velocity={name: torch.zeros_like(block) for name, block in params.blocks().items()},
        generator=make_generator(derive_seed(cfg.seed, "shuffle")),
        best_params=params.clone(),
    )


def _velocity(v, g, cfg):
    return cfg.mu * v - cfg.alpha * g


def candidate_update(state, grads, cfg):
    """The dw_rec that sgd_step would apply for these gradients; state is left untouched"""
    return _velocity(state.velocity["w_rec"], grads["w_rec"], cfg)


def sgd_step(state, grads, cfg):
    """Heavy-ball momentum: v <- mu v - alpha g, w <- w + v, for every block. Returns the applied dw per block"""
    updates = {}
    for name in state.velocity:
        v = _velocity(state.velocity[name], grads[name], cfg)
        if not torch.isfinite(v).all():
            raise NumericalError(f"non-finite update of {name} at iteration {state.step}")
        updates[name] = v
    blocks = state.params.blocks()
    for name, v in updates.items():
        state.velocity[name] = v
        blocks[name].add_(v)
    return updates


def train_iteration(state, batch, cfg, force=False):
    params = state.params
    trace = forward(params, batch.inputs)
    loss = output_loss(trace, batch.targets, params.loss_kind, batch.spec.success_tolerance)
    result = backward(params, trace, loss.output_delta, BpttConfig(h=resolve_depth(cfg.h, trace.steps)))

    dw_rec = candidate_update(state, result.grads, cfg)
    report = build_report(params, trace, result, cfg.reg, dw_rec)
    applied = force or not cfg.reg_enabled or report.accepted
    if applied:
        sgd_step(state, result.grads, cfg)
    else:
        state.queue.append(batch)

    iteration = IterationResult(
        step=state.step,
        epoch=state.epoch,
        applied=applied,
        forced=force and not report.accepted and cfg.reg_enabled,
        loss=loss.mean_loss,
        report=report,
        trace=trace,
        bptt=result,
    )
    state.step += 1
    return iteration


def refill(state, train_set, cfg):
    """Queues a fresh shuffled pass over the training set, cut into minibatches"""
    order = torch.randperm(len(train_set), generator=state.generator)
    n_batches = max(1, len(train_set) // cfg.batch_size)
    for i in range(n_batches):
        state.queue.append(train_set.subset(order[i * cfg.batch_size : (i + 1) * cfg.batch_size]))


METRICS_COLUMNS = [
    "iter",
    "epoch",
    "loss",
    "applied",
    "forced",
    "dS",
    "S",
    "q",
    "gate_q",
    "decision",
    "delta_top",
    "delta_deep",
    "gw_in_norm",
    "gw_rec_norm",
    "gw_out_norm",
    "gb_norm",
]


def metrics_row(iteration):
    report, grads = iteration.report, iteration.bptt.grads
    return {
        "iter": iteration.step,
        "epoch": iteration.epoch,
        "loss": iteration.loss,
        "applied": iteration.applied,
        "forced": iteration.forced,
        "dS": report.dS,
        "S": report.S,
        "q": report.q,
        "gate_q": report.gate_q,
        "decision": report.decision,
        "delta_top": report.top_norm,
        "delta_deep": report.deep_norm,
        "gw_in_norm": float(linalg.norm2(grads["w_in"].reshape(-1))),
        "gw_rec_norm": float(linalg.norm2(grads["w_rec"].reshape(-1))),
        "gw_out_norm": float(linalg.norm2(grads["w_out"].reshape(-1))),
        "gb_norm": float(linalg.norm2(grads["b"])),
    }


def train(cfg, task, splits=None, sizes=None, run_dir=None, hooks=(), init_params=None, progress=True, log_interval=10):
    """
    Trains an SRN on 'task': each epoch draws minibatches until
    cfg.iters_per_epoch corrections were applied, then scores the network on
    the validation split. The best validation network is scored on the test
    split at the end.
    """
    cfg.validate(task.T)
    task.validate()
    if splits is None:
        splits = make_splits(task, derive_seed(cfg.seed, "data"), sizes)
    if init_params is None:
        init_params = init_gaussian(
            task.n_in,
            cfg.hidden,
            task.n_out,
            cfg.sigma,
            derive_seed(cfg.seed, "init"),
            task.output_activation,
            cfg.init_scale,
        )
    state = init_state(init_params.clone(), cfg)

    hooks = list(hooks)
    logger = None
    if run_dir is not None:
        init_params.save_weights(os.path.join(run_dir, "init_model.json"))
        logger = Logger(os.path.join(run_dir, "metrics.csv"), columns=METRICS_COLUMNS)
        recorder = DynamicsRecorder(os.path.join(run_dir, "dynamics.csv"))
        hooks.append(recorder)

    state.best_accuracy = evaluate(state.params, splits["valid"], cfg.eval_batch_size)
    rows = []
    corrections = draws = forced = 0
    start_time = time.time()
    epochs = tqdm.tqdm(range(1, cfg.epochs + 1), desc="Training", disable=not progress)
    for epoch in epochs:
        state.epoch = epoch
        counts = collections.Counter()
        epoch_losses, epoch_q = [], []
        consecutive_rejects = 0
        while counts["applied"] < cfg.iters_per_epoch:
            if not state.queue:
                refill(state, splits["train"], cfg)
            batch = state.queue.popleft()
            force = consecutive_rejects >= cfg.max_consecutive_rejects
            if force:
                tqdm.tqdm.write(
                    f"---- WARNING: {consecutive_rejects} consecutive minibatches rejected in epoch {epoch}, "
                    f"forcing an update at iteration {state.step}"
                )
            iteration = train_iteration(state, batch, cfg, force=force)
            draws += 1

            row = metrics_row(iteration)
            rows.append(row)
            if logger is not None:
                logger.list_of_scalars_summary([(k, v) for k, v in row.items() if k != "iter"], row["iter"])
            for hook in hooks:
                hook(iteration)

            counts[iteration.report.decision] += 1
            epoch_losses.append(iteration.loss)
            epoch_q.append(iteration.report.q)
            if iteration.applied:
                counts["applied"] += 1
                consecutive_rejects = 0
                forced += iteration.forced
            else:
                consecutive_rejects += 1
        corrections += counts["applied"]

        accuracy = evaluate(state.params, splits["valid"], cfg.eval_batch_size)
        if accuracy > state.best_accuracy:
            state.best_accuracy = accuracy
            state.best_params = state.params.clone()
            state.best_epoch = epoch
        epochs.set_postfix(valid=f"{accuracy:.3f}", best=f"{state.best_accuracy:.3f}")

        if progress and (epoch % log_interval == 0 or epoch == cfg.epochs):
            log_str = "\n---- [Epoch %d/%d, Iteration %d] ----\n" % (epoch, cfg.epochs, state.step)
            metric_table = [
                ["Metrics", "Value"],
                ["loss", "%.6f" % (sum(epoch_losses) / len(epoch_losses))],
                ["corrections", "%d" % counts["applied"]],
                ["accepted", "%d" % counts[ACCEPT]],
                ["rejected |dS|", "%d" % counts[REJECT_LARGE_DS]],
                ["rejected Q", "%d" % counts[REJECT_Q_DIRECTION]],
                ["last Q", "%.3f" % epoch_q[-1]],
                ["valid acc", "%.2f%%" % (100 * accuracy)],
                ["best acc", "%.2f%%" % (100 * state.best_accuracy)],
            ]
            log_str += AsciiTable(metric_table).table
            epochs_left = cfg.epochs - epoch
            time_left = datetime.timedelta(seconds=epochs_left * (time.time() - start_time) / epoch)
            log_str += f"\n---- ETA {time_left}"
            tqdm.tqdm.write(log_str)

    test_accuracy = evaluate(state.best_params, splits["test"], cfg.eval_batch_size)
    if run_dir is not None:
        logger.close()
        recorder.close()
        state.best_params.save_weights(os.path.join(run_dir, "model.json"))

    return TrainSummary(
        test_accuracy=test_accuracy,
        best_valid_accuracy=state.best_accuracy,
        best_epoch=state.best_epoch,
        corrections=corrections,
        draws=draws,
        forced=forced,
        params=state.best_params,
        init_params=init_params,
        metrics=pd.DataFrame(rows, columns=METRICS_COLUMNS),
    )


def summary_table(results, task):
    """Best and mean test accuracy per regularization setting, in the accuracy-table layout"""
    table = [["", f"{task.kind} best", f"{task.kind} mean"]]
    for reg in ("off", "on"):
        accuracies = [r["test_accuracy"] for r in results if r["reg"] == reg]
        if accuracies:
            table.append(
                [
                    f"T={task.T}, grad. reg. {reg.upper()}",
                    "%.1f%%" % (100 * max(accuracies)),
                    "%.1f%%" % (100 * sum(accuracies) / len(accuracies)),
                ]
            )
    return table


def main(argv=None):
    parser = ArgumentParser(description="Train SRNs with or without sampling-based gradient regularization")
    add_common_args(parser)
    parser.add_argument("--log_interval", type=int, default=10, help="epochs between metric tables")
    parser.add_argument("--quiet", action="store_true", help="disable progress output")
    opt = parser.parse_args(argv)
    config = load_run_config(opt)
    print(config)

    sweep_dir = make_run_dir(config.out, f"train_{config.task.kind}_T{config.task.T}_seed{config.seeds[0]}")
    modes = {"on": ["on"], "off": ["off"], "both": ["off", "on"]}[config.reg_mode]

    results = []
    for reg in modes:
        for seed in config.seeds:
            run_dir = os.path.join(sweep_dir, f"reg-{reg}_seed{seed}")
            os.makedirs(run_dir)
            print(f"\n---- Training {config.task.kind} T={config.task.T}, grad. reg. {reg.upper()}, seed {seed} ----")
            summary = train(
                config.train_config(seed, reg == "on"),
                config.task,
                sizes=config.sizes,
                run_dir=run_dir,
                progress=not opt.quiet,
                log_interval=opt.log_interval,
            )
            results.append(
                {
                    "task": config.task.kind,
                    "T": config.task.T,
                    "reg": reg,
                    "seed": seed,
                    "best_valid_accuracy": summary.best_valid_accuracy,
                    "test_accuracy": summary.test_accuracy,
                    "best_epoch": summary.best_epoch,
                    "corrections": summary.corrections,
                    "draws": summary.draws,
                    "forced": summary.forced,
                }
            )
            print(f"---- test accuracy {summary.test_accuracy:.4f} (best valid {summary.best_valid_accuracy:.4f})")

    write_table(results, os.path.join(sweep_dir, "summary.csv"))
    with open(os.path.join(sweep_dir, "summary.json"), "w") as f:
        json.dump({"config": asdict(config), "runs": results}, f, indent=2)
    print(AsciiTable(summary_table(results, config.task)).table)
    print(f"Results written to {sweep_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(run_command(main))
