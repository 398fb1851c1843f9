import json
import os
import sys

import torch
import tqdm
from torch.utils.data import DataLoader

from models import SrnParams, forward, output_loss
from utils.datasets import SequenceBatch
from utils.parse_config import ArgumentParser
from utils.utils import run_command


def check_compatible(params, spec):
    if params.n_in != spec.n_in or params.n_out != spec.n_out:
        raise ValueError(
            f"network ({params.n_in} inputs, {params.n_out} outputs) does not fit task {spec.kind} "
            f"({spec.n_in} inputs, {spec.n_out} outputs)"
        )
    if params.output_activation != spec.output_activation:
        raise ValueError(f"{params.output_activation} output layer cannot solve {spec.kind}")


def evaluate(params, dataset, batch_size=1000, progress=False):
    """Fraction of sequences in 'dataset' the network gets right"""
    check_compatible(params, dataset.spec)
    if len(dataset) == 0:
        return 0.0
    dataloader = DataLoader(dataset, batch_size=batch_size, shuffle=False, collate_fn=dataset.collate_fn)

    n_correct = 0
    for inputs, targets in tqdm.tqdm(dataloader, desc="Evaluating", disable=not progress):
        with torch.no_grad():
            trace = forward(params, inputs)
            result = output_loss(trace, targets, params.loss_kind, dataset.spec.success_tolerance)
        n_correct += int(result.correct.sum())

    return n_correct / len(dataset)


def main(argv=None):
    parser = ArgumentParser(description="Score a saved network on a saved dataset")
    parser.add_argument("--model", type=str, required=True, help="path to model file")
    parser.add_argument("--data", type=str, required=True, help="path to dataset file")
    parser.add_argument("--batch_size", type=int, default=1000, help="size of each evaluation batch")
    parser.add_argument("--out", type=str, default=None, help="directory for eval_summary.json")
    opt = parser.parse_args(argv)
    print(opt)

    params = SrnParams.load_weights(opt.model)
    dataset = SequenceBatch.load(opt.data)

    print("Compute accuracy...")
    accuracy = evaluate(params, dataset, opt.batch_size, progress=True)
    print(f"---- {dataset.spec.kind} T={dataset.spec.T}: accuracy {accuracy:.4f} on {len(dataset)} sequences")

    if opt.out:
        os.makedirs(opt.out, exist_ok=True)
        summary = {"model": opt.model, "data": opt.data, "n": len(dataset), "accuracy": accuracy}
        summary.update({f"data_{k}": v for k, v in dataset.header().items()})
        with open(os.path.join(opt.out, "eval_summary.json"), "w") as f:
            json.dump(summary, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(run_command(main))
