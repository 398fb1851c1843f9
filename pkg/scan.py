import os
import sys

from terminaltables import AsciiTable

from models import init_gaussian
from utils.datasets import generate
from utils.diagnostics import correlation_check, depth_scan
from utils.parse_config import ArgumentParser, add_common_args, load_run_config
from utils.regularizer import resolve_depth
from utils.utils import derive_seed, make_run_dir, run_command


def profile_name(sigma):
    return f"depth_profile_sigma{sigma:g}.csv"


def scan_sigmas(task, sigmas, hidden, seed, h, n_probes, init_scale="spectral"):
    """One depth profile of a freshly initialized network per sigma, all over the same probe sequences"""
    probes = generate(task, n_probes, derive_seed(seed, "probes"))
    profiles = {}
    for sigma in sigmas:
        params = init_gaussian(
            task.n_in, hidden, task.n_out, sigma, derive_seed(seed, "init"), task.output_activation, init_scale
        )
        profiles[sigma] = depth_scan(params, probes, h)
    return profiles


def main(argv=None):
    parser = ArgumentParser(description="Depth profiles of backpropagated delta norms at initialization")
    add_common_args(parser)
    opt = parser.parse_args(argv)
    config = load_run_config(opt)
    # An explicit --sigma scans that value alone
    sigmas = [opt.sigma] if opt.sigma is not None and opt.sigmas is None else config.sigmas
    seed = config.seeds[0]
    h = resolve_depth(config.train.h, config.task.T)
    print(config.task, f"h={h}", f"sigmas={sigmas}", f"init_scale={config.train.init_scale}")

    profiles = scan_sigmas(
        config.task, sigmas, config.train.hidden, seed, h, config.probes, config.train.init_scale
    )
    scan_dir = make_run_dir(config.out, f"scan_{config.task.kind}_T{config.task.T}_seed{seed}")

    table = [["sigma", "|delta(k)|", "|delta(k-h)|", "end/start", "correlation"]]
    for sigma, profile in profiles.items():
        profile.save(os.path.join(scan_dir, profile_name(sigma)))
        table.append(
            [
                "%g" % sigma,
                "%.3e" % float(profile.delta_norm[0]),
                "%.3e" % float(profile.delta_norm[-1]),
                "%.3e" % profile.end_start_ratio(),
                "%.4f" % correlation_check(profile),
            ]
        )
    print(AsciiTable(table).table)
    print(f"Profiles written to {scan_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(run_command(main))
