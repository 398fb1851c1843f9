import datetime
import hashlib
import os
import sys

import torch


MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Configuration field outside its documented range"""


class ShapeError(ValueError):
    """Operand dimensions do not line up"""


class NumericalError(ArithmeticError):
    """NaN or Inf reached a place where values must stay finite"""


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """
    Derives an independent 63-bit sub-seed from 'seed' and a path of keys,
    e.g. derive_seed(7, "data", "train"). Keys may be ints or strings.
    """
    state = splitmix64(int(seed) & MASK64)
    for key in keys:
        if isinstance(key, str):
            key = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
        state = splitmix64(state ^ (int(key) & MASK64))
    return state >> 1


def make_generator(seed):
    generator = torch.Generator(device="cpu")
    generator.manual_seed(int(seed))
    return generator


def check_finite(tensor, what):
    if not torch.isfinite(tensor).all():
        raise NumericalError(f"non-finite values in {what}")
    return tensor


def make_run_dir(out_dir, name):
    """Creates out_dir/<timestamp>_<name>, never reusing an existing directory"""
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = os.path.join(out_dir, f"{stamp}_{name}")
    path, suffix = base, 1
    while os.path.exists(path):
        path = f"{base}-{suffix}"
        suffix += 1
    os.makedirs(path)
    return path


def run_command(main, argv=None):
    """Runs a command entry point and maps failures onto the exit-code contract"""
    try:
        return main(argv) or 0
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
