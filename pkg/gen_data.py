import os
import sys

from utils.datasets import make_splits
from utils.parse_config import ArgumentParser, add_common_args, load_run_config
from utils.utils import derive_seed, run_command


def dataset_path(out_dir, spec, split):
    return os.path.join(out_dir, f"{spec.kind}_T{spec.T}_{split}.seq")


def main(argv=None):
    parser = ArgumentParser(description="Generate train / valid / test sequence files for a benchmark task")
    add_common_args(parser)
    opt = parser.parse_args(argv)
    config = load_run_config(opt)
    print(config.task, config.sizes)

    os.makedirs(config.out, exist_ok=True)
    seed = config.seeds[0]
    splits = make_splits(config.task, derive_seed(seed, "data"), config.sizes)
    for name, batch in splits.items():
        path = dataset_path(config.out, config.task, name)
        batch.save(path)
        print(f"---- {name}: {len(batch)} sequences -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(run_command(main))
