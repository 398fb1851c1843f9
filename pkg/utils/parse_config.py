import argparse
import sys
from dataclasses import dataclass, field, replace

from models import INIT_SCALES
from utils.datasets import DEFAULT_SIZES, TaskSpec
from utils.regularizer import RegConfig
from utils.utils import ConfigError


REG_MODES = ("on", "off", "both")


@dataclass
class TrainConfig:
    alpha: float = 3e-4
    mu: float = 0.9
    batch_size: int = 10
    epochs: int = 2000
    iters_per_epoch: int = 50
    # 0 means the full horizon T - 1
    h: int = 0
    reg_enabled: bool = True
    reg: RegConfig = field(default_factory=RegConfig)
    hidden: int = 100
    sigma: float = 0.01
    # "spectral": w_rec spectral radius about sigma * hidden, "std": sigma is the weight std
    init_scale: str = "spectral"
    seed: int = 0
    max_consecutive_rejects: int = 200
    eval_batch_size: int = 1000

    def validate(self, steps=None):
        if not self.alpha > 0:
            raise ConfigError(f"train.alpha: must be positive, got {self.alpha}")
        if not 0 <= self.mu < 1:
            raise ConfigError(f"train.mu: must satisfy 0 <= mu < 1, got {self.mu}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"train.epochs: must be non-negative, got {self.epochs}")
        if self.iters_per_epoch < 1:
            raise ConfigError(f"train.iters_per_epoch: must be at least 1, got {self.iters_per_epoch}")
        if self.h < 0 or (steps is not None and self.h > steps):
            raise ConfigError(f"train.h: must lie in [0, T={steps}], got {self.h}")
        if self.hidden < 1:
            raise ConfigError(f"net.hidden: must be at least 1, got {self.hidden}")
        if not self.sigma > 0:
            raise ConfigError(f"net.sigma: must be positive, got {self.sigma}")
        if self.init_scale not in INIT_SCALES:
            raise ConfigError(f"net.init_scale: must be one of {INIT_SCALES}, got '{self.init_scale}'")
        if self.max_consecutive_rejects < 1:
            raise ConfigError(f"train.max_consecutive_rejects: must be at least 1, got {self.max_consecutive_rejects}")
        if self.eval_batch_size < 1:
            raise ConfigError(f"train.eval_batch_size: must be at least 1, got {self.eval_batch_size}")
        self.reg.validate()
        return self


@dataclass
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    reg_mode: str = "on"
    seeds: list = field(default_factory=lambda: [0])
    out: str = "output"
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    probes: int = 100
    sigmas: list = field(default_factory=lambda: [0.005, 0.01, 0.02])

    def validate(self):
        self.task.validate()
        self.train.validate(self.task.T)
        if self.reg_mode not in REG_MODES:
            raise ConfigError(f"regularizer.enabled: must be one of {REG_MODES}, got '{self.reg_mode}'")
        if not self.seeds:
            raise ConfigError("run.seeds: at least one seed is required")
        for name, size in self.sizes.items():
            if size < 1:
                raise ConfigError(f"data.n_{name}: must be at least 1, got {size}")
        if self.probes < 1:
            raise ConfigError(f"scan.probes: must be at least 1, got {self.probes}")
        if not self.sigmas or any(not s > 0 for s in self.sigmas):
            raise ConfigError(f"scan.sigmas: every sigma must be positive, got {self.sigmas}")
        return self

    def train_config(self, seed, reg_enabled):
        return replace(self.train, seed=seed, reg_enabled=reg_enabled, reg=replace(self.train.reg, h=self.train.h))


def parse_list(cast):
    def parse(value):
        return [cast(x) for x in str(value).replace(";", ",").split(",") if x.strip()]

    parse.__name__ = f"{cast.__name__}_list"
    return parse


# (section, key in the config file, option dest, type)
OPTIONS = [
    ("task", "kind", "task", str),
    ("task", "T", "T", int),
    ("task", "success_tolerance", "tolerance", float),
    ("net", "hidden", "hidden", int),
    ("net", "sigma", "sigma", float),
    ("net", "init_scale", "init_scale", str),
    ("train", "alpha", "alpha", float),
    ("train", "mu", "mu", float),
    ("train", "batch_size", "batch", int),
    ("train", "epochs", "epochs", int),
    ("train", "iters_per_epoch", "iters", int),
    ("train", "h", "h", int),
    ("train", "max_consecutive_rejects", "max_rejects", int),
    ("train", "eval_batch_size", "eval_batch", int),
    ("regularizer", "enabled", "reg", str),
    ("regularizer", "q_min", "qmin", float),
    ("regularizer", "q_max", "qmax", float),
    ("regularizer", "r0", "r0", float),
    ("regularizer", "r0_mode", "r0_mode", str),
    ("regularizer", "q_orientation", "q_orientation", str),
    ("data", "n_train", "n_train", int),
    ("data", "n_valid", "n_valid", int),
    ("data", "n_test", "n_test", int),
    ("scan", "sigmas", "sigmas", parse_list(float)),
    ("scan", "probes", "probes", int),
    ("run", "seeds", "seeds", parse_list(int)),
    ("run", "out", "out", str),
]


def parse_run_config(path):
    """Parses an experiment configuration file into {section: {key: value}}"""
    with open(path, "r") as fp:
        lines = fp.read().split("\n")
    lines = [x.strip() for x in lines]
    lines = [x for x in lines if x and not x.startswith("#")]
    sections = {}
    current = None
    for line in lines:
        if line.startswith("["):  # This marks the start of a new block
            current = line[1:-1].strip()
            sections.setdefault(current, {})
        elif current is None:
            raise ConfigError(f"{path}: '{line}' appears before any [section]")
        elif "=" not in line:
            raise ConfigError(f"{path}: expected key=value in section [{current}], got '{line}'")
        else:
            key, value = line.split("=", 1)
            sections[current][key.strip()] = value.split("#", 1)[0].strip()
    return sections


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def add_common_args(parser):
    parser.add_argument("--config", type=str, help="path to experiment configuration file")
    parser.add_argument("--task", type=str, help="adding, multiplication, temporal_order or temporal_order_3bit")
    parser.add_argument("--T", type=int, help="sequence length")
    parser.add_argument("--tolerance", type=float, help="success tolerance for regression tasks")
    parser.add_argument("--hidden", type=int, help="number of hidden units")
    parser.add_argument("--sigma", type=float, help="scale of the Gaussian weight initialization")
    parser.add_argument("--init_scale", type=str, choices=INIT_SCALES, help="read sigma as the weight std or as spectral radius / hidden")
    parser.add_argument("--alpha", type=float, help="learning rate")
    parser.add_argument("--mu", type=float, help="momentum")
    parser.add_argument("--batch", type=int, help="size of each minibatch")
    parser.add_argument("--epochs", type=int, help="number of epochs")
    parser.add_argument("--iters", type=int, help="accepted corrections per epoch")
    parser.add_argument("--h", type=int, help="BPTT truncation depth (0 = T - 1)")
    parser.add_argument("--max_rejects", type=int, help="consecutive rejected minibatches before a forced update")
    parser.add_argument("--eval_batch", type=int, help="sequences per evaluation batch")
    parser.add_argument("--reg", type=str, choices=REG_MODES, help="sampling-based gradient regularization")
    parser.add_argument("--qmin", type=float, help="lower end of the safe Q range")
    parser.add_argument("--qmax", type=float, help="upper end of the safe Q range")
    parser.add_argument("--r0", type=float, help="threshold on |dS| (relative to S unless --r0_mode absolute)")
    parser.add_argument("--r0_mode", type=str, choices=("relative", "absolute"), help="how r0 is interpreted")
    parser.add_argument("--q_orientation", type=str, choices=("prose", "literal"), help="sign of Q fed to the gate")
    parser.add_argument("--n_train", type=int, help="training sequences")
    parser.add_argument("--n_valid", type=int, help="validation sequences")
    parser.add_argument("--n_test", type=int, help="test sequences")
    parser.add_argument("--sigmas", type=parse_list(float), help="comma separated sigmas for depth scans")
    parser.add_argument("--probes", type=int, help="probe sequences per depth scan")
    parser.add_argument("--seed", type=int, help="single seed")
    parser.add_argument("--seeds", type=parse_list(int), help="comma separated seeds")
    parser.add_argument("--out", type=str, help="output directory")
    return parser


def _cast(section, key, cast, value):
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot parse '{value}' as {cast.__name__}") from None


def load_run_config(opt):
    """Merges defaults, the optional config file and command-line flags (flag > file > default)"""
    values = {}
    known = {(section, key): (dest, cast) for section, key, dest, cast in OPTIONS}
    if getattr(opt, "config", None):
        for section, entries in parse_run_config(opt.config).items():
            for key, raw in entries.items():
                if (section, key) not in known:
                    raise ConfigError(f"{section}.{key}: unknown configuration field")
                dest, cast = known[(section, key)]
                values[dest] = _cast(section, key, cast, raw)
    for section, key, dest, cast in OPTIONS:
        flag = getattr(opt, dest, None)
        if flag is not None:
            values[dest] = flag
    if getattr(opt, "seed", None) is not None:
        values["seeds"] = [opt.seed]

    defaults = RunConfig()
    task = TaskSpec(
        kind=values.get("task", defaults.task.kind),
        T=values.get("T", defaults.task.T),
        success_tolerance=values.get("tolerance", defaults.task.success_tolerance),
    )
    reg = RegConfig(
        q_min=values.get("qmin", defaults.train.reg.q_min),
        q_max=values.get("qmax", defaults.train.reg.q_max),
        r0=values.get("r0", defaults.train.reg.r0),
        r0_mode=values.get("r0_mode", defaults.train.reg.r0_mode),
        q_orientation=values.get("q_orientation", defaults.train.reg.q_orientation),
    )
    reg_mode = values.get("reg", defaults.reg_mode)
    train = TrainConfig(
        alpha=values.get("alpha", defaults.train.alpha),
        mu=values.get("mu", defaults.train.mu),
        batch_size=values.get("batch", defaults.train.batch_size),
        epochs=values.get("epochs", defaults.train.epochs),
        iters_per_epoch=values.get("iters", defaults.train.iters_per_epoch),
        h=values.get("h", defaults.train.h),
        reg_enabled=reg_mode != "off",
        reg=reg,
        hidden=values.get("hidden", defaults.train.hidden),
        sigma=values.get("sigma", defaults.train.sigma),
        init_scale=values.get("init_scale", defaults.train.init_scale),
        max_consecutive_rejects=values.get("max_rejects", defaults.train.max_consecutive_rejects),
        eval_batch_size=values.get("eval_batch", defaults.train.eval_batch_size),
    )
    sizes = {name: values.get(f"n_{name}", size) for name, size in defaults.sizes.items()}
    config = RunConfig(
        task=task,
        train=train,
        reg_mode=reg_mode,
        seeds=values.get("seeds", defaults.seeds),
        out=values.get("out", defaults.out),
        sizes=sizes,
        probes=values.get("probes", defaults.probes),
        sigmas=values.get("sigmas", defaults.sigmas),
    )
    return config.validate()
