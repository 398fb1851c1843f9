"""
Single entry point for the experiment scripts:

    python cli.py gen   --config config/srn.cfg
    python cli.py train --config config/table1_scaled.cfg --reg both
    python cli.py scan  --task adding --sigmas 0.005,0.01,0.02
    python cli.py eval  --model model.json --data adding_T100_test.seq
"""
import sys

import gen_data
import scan
import test
import train
from utils.utils import run_command


COMMANDS = {
    "gen": gen_data.main,
    "train": train.main,
    "scan": scan.main,
    "eval": test.main,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        print(f"usage: cli.py {{{','.join(COMMANDS)}}} [options]", file=sys.stderr)
        return 1
    return run_command(COMMANDS[argv[0]], argv[1:])


if __name__ == "__main__":
    sys.exit(main())
