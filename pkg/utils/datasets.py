"""
Seeded generators for the synthetic long-term-dependency benchmarks.

adding / multiplication
    Two input channels: values drawn uniformly from [0, 1] and a marker
    channel holding 1.0 at exactly two steps. The first marker falls in
    [1, T // 10], the second in (T // 10, T // 2]. The target is
    (v1 + v2) / 2 for adding and v1 * v2 for multiplication; a prediction
    counts as correct when |y - t| < success_tolerance (0.04).

temporal_order / temporal_order_3bit
    One-hot symbols over 4 distractors (indices 0..3) and X, Y (4, 5).
    One special symbol sits at a random step inside each window
    ([0.1T, 0.2T], [0.5T, 0.6T] for two specials; [0.1T, 0.2T],
    [0.3T, 0.4T], [0.6T, 0.7T] for three). The class enumerates the
    ordered specials lexicographically with X < Y: (X, X) -> 0,
    (Y, Y, Y) -> 7.

Sequences have fixed length T and positions above are 1-based steps.
"""
import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import Dataset

from utils import linalg
from utils.utils import ConfigError, derive_seed, make_generator


TASKS = ("adding", "multiplication", "temporal_order", "temporal_order_3bit")
N_DISTRACTORS = 4
# Special-symbol windows in tenths of T
TEMPORAL_WINDOWS = {2: ((1, 2), (5, 6)), 3: ((1, 2), (3, 4), (6, 7))}
DEFAULT_SIZES = {"train": 20000, "valid": 1000, "test": 10000}

DATASET_MAGIC = b"SRNSEQ 1\n"


@dataclass
class TaskSpec:
    kind: str = "temporal_order"
    T: int = 100
    success_tolerance: float = 0.04

    @property
    def is_classification(self):
        return self.kind.startswith("temporal_order")

    @property
    def special_count(self):
        return 3 if self.kind == "temporal_order_3bit" else 2

    @property
    def n_in(self):
        return N_DISTRACTORS + 2 if self.is_classification else 2

    @property
    def n_out(self):
        return 2**self.special_count if self.is_classification else 1

    @property
    def output_activation(self):
        return "softmax" if self.is_classification else "linear"

    @property
    def loss(self):
        return "cross_entropy" if self.is_classification else "mse"

    def windows(self):
        """Inclusive (first, last) 1-based step range of each marker or special symbol"""
        if self.is_classification:
            return [(lo * self.T // 10, hi * self.T // 10) for lo, hi in TEMPORAL_WINDOWS[self.special_count]]
        return [(1, self.T // 10), (self.T // 10 + 1, self.T // 2)]

    def validate(self):
        if self.kind not in TASKS:
            raise ConfigError(f"task.kind: must be one of {TASKS}, got '{self.kind}'")
        if not self.is_classification and self.T < 10:
            raise ConfigError(f"task.T: {self.kind} needs T >= 10 for disjoint marker windows, got {self.T}")
        if not self.success_tolerance > 0:
            raise ConfigError(f"task.success_tolerance: must be positive, got {self.success_tolerance}")
        previous_last = 0
        for i, (first, last) in enumerate(self.windows()):
            if first < 1 or last > self.T or first > last:
                raise ConfigError(
                    f"task.T: window {i + 1} spans steps [{first}, {last}], outside [1, {self.T}]; T={self.T} is too small"
                )
            if first <= previous_last:
                raise ConfigError(f"task.T: window {i + 1} overlaps window {i} at T={self.T}")
            previous_last = last
        return self


class SequenceBatch(Dataset):
    """N sequences of T steps with their targets: (N, n_out) floats or (N,) class indices"""

    def __init__(self, inputs, targets, spec, seed=0, split=""):
        if inputs.dim() != 3 or inputs.shape[1] != spec.T or inputs.shape[2] != spec.n_in:
            raise ValueError(f"inputs of shape {tuple(inputs.shape)} do not match task {spec.kind} T={spec.T}")
        if targets.shape[0] != inputs.shape[0]:
            raise ValueError(f"{targets.shape[0]} targets for {inputs.shape[0]} sequences")
        self.inputs = inputs
        self.targets = targets
        self.spec = spec
        self.seed = seed
        self.split = split

    def __getitem__(self, index):
        return self.inputs[index], self.targets[index]

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def T(self):
        return self.spec.T

    def collate_fn(self, batch):
        inputs, targets = list(zip(*batch))
        return torch.stack(inputs), torch.stack(targets)

    def subset(self, indices):
        indices = torch.as_tensor(indices, dtype=torch.long)
        return SequenceBatch(self.inputs[indices], self.targets[indices], self.spec, self.seed, self.split)

    def header(self):
        return {
            "task": self.spec.kind,
            "T": self.spec.T,
            "n": len(self),
            "seed": self.seed,
            "split": self.split,
            "n_in": self.spec.n_in,
            "n_out": self.spec.n_out,
            "success_tolerance": self.spec.success_tolerance,
            "targets": "class" if self.spec.is_classification else "value",
        }

    def save(self, path):
        """Magic line, JSON header line, then little-endian float64 inputs and targets (int64 for classes)"""
        target_dtype = "<i8" if self.spec.is_classification else "<f8"
        with open(path, "wb") as fp:
            fp.write(DATASET_MAGIC)
            fp.write((json.dumps(self.header(), sort_keys=True) + "\n").encode("utf-8"))
            fp.write(self.inputs.numpy().astype("<f8").tobytes())
            fp.write(self.targets.numpy().astype(target_dtype).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fp:
            data = fp.read()
        if not data.startswith(DATASET_MAGIC):
            raise ValueError(f"{path}: not a sequence dataset file")
        end = data.find(b"\n", len(DATASET_MAGIC))
        try:
            header = json.loads(data[len(DATASET_MAGIC) : end].decode("utf-8"))
            spec = TaskSpec(kind=header["task"], T=int(header["T"]), success_tolerance=float(header["success_tolerance"]))
            n = int(header["n"])
        except (ValueError, KeyError, TypeError) as e:
            raise ValueError(f"{path}: malformed dataset header ({e})") from e
        spec.validate()
        body = data[end + 1 :]
        n_inputs = n * spec.T * spec.n_in
        n_targets = n if spec.is_classification else n * spec.n_out
        if len(body) != 8 * (n_inputs + n_targets):
            raise ValueError(f"{path}: expected {8 * (n_inputs + n_targets)} payload bytes, found {len(body)}")
        inputs = np.frombuffer(body, dtype="<f8", count=n_inputs).reshape(n, spec.T, spec.n_in)
        if spec.is_classification:
            targets = torch.from_numpy(np.frombuffer(body, dtype="<i8", offset=8 * n_inputs).astype(np.int64))
        else:
            targets = torch.from_numpy(np.frombuffer(body, dtype="<f8", offset=8 * n_inputs).reshape(n, spec.n_out).astype(np.float64))
        return cls(torch.from_numpy(inputs.astype(np.float64)), targets, spec, int(header.get("seed", 0)), header.get("split", ""))


def _marked_values(spec, n, seed):
    """Value channel, marker channel and the two marked values of each sequence"""
    generator = make_generator(seed)
    values = torch.rand(n, spec.T, generator=generator, dtype=linalg.DTYPE)
    markers = linalg.zeros(n, spec.T)
    rows = torch.arange(n)
    marked = []
    for first, last in spec.windows():
        position = torch.randint(first, last + 1, (n,), generator=generator) - 1
        markers[rows, position] = 1.0
        marked.append(values[rows, position])
    inputs = torch.stack([values, markers], dim=-1)
    return inputs, marked[0], marked[1]


def gen_adding(T, n, seed):
    spec = TaskSpec("adding", T).validate()
    inputs, v1, v2 = _marked_values(spec, n, seed)
    return SequenceBatch(inputs, ((v1 + v2) / 2).unsqueeze(-1), spec, seed)


def gen_multiplication(T, n, seed):
    spec = TaskSpec("multiplication", T).validate()
    inputs, v1, v2 = _marked_values(spec, n, seed)
    return SequenceBatch(inputs, (v1 * v2).unsqueeze(-1), spec, seed)


def gen_temporal_order(T, n, seed, special_count=2):
    if special_count not in TEMPORAL_WINDOWS:
        raise ValueError(f"special_count must be 2 or 3, got {special_count}")
    spec = TaskSpec("temporal_order" if special_count == 2 else "temporal_order_3bit", T).validate()
    generator = make_generator(seed)
    symbols = torch.randint(0, N_DISTRACTORS, (n, T), generator=generator)
    bits = torch.randint(0, 2, (n, special_count), generator=generator)
    rows = torch.arange(n)
    for i, (first, last) in enumerate(spec.windows()):
        position = torch.randint(first, last + 1, (n,), generator=generator) - 1
        symbols[rows, position] = N_DISTRACTORS + bits[:, i]
    inputs = F.one_hot(symbols, N_DISTRACTORS + 2).to(linalg.DTYPE)
    weights = 2 ** torch.arange(special_count - 1, -1, -1)
    targets = (bits * weights).sum(dim=-1)
    return SequenceBatch(inputs, targets, spec, seed)


def generate(spec, n, seed):
    spec.validate()
    if spec.kind == "adding":
        batch = gen_adding(spec.T, n, seed)
    elif spec.kind == "multiplication":
        batch = gen_multiplication(spec.T, n, seed)
    else:
        batch = gen_temporal_order(spec.T, n, seed, spec.special_count)
    batch.spec = spec
    return batch


def make_splits(spec, seed, sizes=None):
    """Train / valid / test batches, each from its own sub-seed of 'seed'"""
    sizes = dict(DEFAULT_SIZES, **(sizes or {}))
    splits = {}
    for name in ("train", "valid", "test"):
        batch = generate(spec, sizes[name], derive_seed(seed, "split", name))
        batch.split = name
        splits[name] = batch
    return splits


