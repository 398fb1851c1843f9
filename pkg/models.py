import json
import math
from dataclasses import dataclass

import torch

from utils import linalg
from utils.utils import NumericalError, ShapeError, check_finite, make_generator


HIDDEN_ACTIVATION = "tanh"
OUTPUT_ACTIVATIONS = ("linear", "softmax")
# Loss kind each output activation pairs with
LOSS_KINDS = {"linear": "mse", "softmax": "cross_entropy"}

# "std": weights ~ N(0, sigma^2)
# "spectral": weights ~ N(0, sigma^2 n_hid), spectral radius of w_rec about sigma n_hid
INIT_SCALES = ("std", "spectral")

MODEL_FORMAT = "srn-params"
MODEL_VERSION = 1


@dataclass
class SrnParams:
    """
    Weights of a Simple Recurrent Network:
        a(k) = u(k) w_in + z(k-1) w_rec + b
        z(k) = tanh(a(k))
        y    = g(z(T) w_out)
    The hidden activation is always tanh; g is linear or softmax.
    """

    w_in: torch.Tensor
    w_rec: torch.Tensor
    w_out: torch.Tensor
    b: torch.Tensor
    output_activation: str = "linear"
    sigma: float = 0.0
    seed: int = 0
    init_scale: str = "std"

    hidden_activation = HIDDEN_ACTIVATION

    def __post_init__(self):
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation '{self.output_activation}'")
        if self.init_scale not in INIT_SCALES:
            raise ValueError(f"unknown init scale '{self.init_scale}'")
        n_hid = self.w_rec.shape[0]
        if n_hid < 1 or self.w_rec.shape != (n_hid, n_hid):
            raise ShapeError(f"w_rec must be square with at least one unit, got {tuple(self.w_rec.shape)}")
        if self.w_in.dim() != 2 or self.w_in.shape[1] != n_hid:
            raise ShapeError(f"w_in {tuple(self.w_in.shape)} does not feed {n_hid} hidden units")
        if self.w_out.dim() != 2 or self.w_out.shape[0] != n_hid:
            raise ShapeError(f"w_out {tuple(self.w_out.shape)} does not read {n_hid} hidden units")
        if self.b.shape != (n_hid,):
            raise ShapeError(f"b must have shape ({n_hid},), got {tuple(self.b.shape)}")

    @property
    def n_in(self):
        return self.w_in.shape[0]

    @property
    def n_hid(self):
        return self.w_rec.shape[0]

    @property
    def n_out(self):
        return self.w_out.shape[1]

    @property
    def loss_kind(self):
        return LOSS_KINDS[self.output_activation]

    def blocks(self):
        return {"w_in": self.w_in, "w_rec": self.w_rec, "w_out": self.w_out, "b": self.b}

    def clone(self):
        return SrnParams(
            w_in=self.w_in.clone(),
            w_rec=self.w_rec.clone(),
            w_out=self.w_out.clone(),
            b=self.b.clone(),
            output_activation=self.output_activation,
            sigma=self.sigma,
            seed=self.seed,
            init_scale=self.init_scale,
        )

    def with_w_rec(self, w_rec):
        """Shallow copy sharing every block except the recurrent weights"""
        return SrnParams(
            self.w_in, w_rec, self.w_out, self.b, self.output_activation, self.sigma, self.seed, self.init_scale
        )

    def serialize(self):
        """Self-describing JSON document; floats keep their shortest round-trip repr"""
        document = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "n_in": self.n_in,
            "n_hid": self.n_hid,
            "n_out": self.n_out,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "sigma": self.sigma,
            "seed": self.seed,
            "init_scale": self.init_scale,
        }
        for name, block in self.blocks().items():
            document[name] = block.reshape(-1).tolist()
        return (json.dumps(document, indent=1) + "\n").encode("utf-8")

    @classmethod
    def deserialize(cls, data):
        try:
            document = json.loads(data.decode("utf-8") if isinstance(data, bytes) else data)
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"malformed model file: {e}") from e
        if not isinstance(document, dict) or document.get("format") != MODEL_FORMAT:
            raise ValueError(f"malformed model file: not a '{MODEL_FORMAT}' document")
        if document.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model file version {document.get('version')}")
        if document.get("hidden_activation") != HIDDEN_ACTIVATION:
            raise ValueError(f"unsupported hidden activation {document.get('hidden_activation')}")
        try:
            n_in, n_hid, n_out = int(document["n_in"]), int(document["n_hid"]), int(document["n_out"])
            shapes = {"w_in": (n_in, n_hid), "w_rec": (n_hid, n_hid), "w_out": (n_hid, n_out), "b": (n_hid,)}
            blocks = {}
            for name, shape in shapes.items():
                flat = linalg.as_tensor(document[name])
                if flat.dim() != 1 or flat.numel() != torch.Size(shape).numel():
                    raise ValueError(f"malformed model file: '{name}' should hold {torch.Size(shape).numel()} values")
                blocks[name] = flat.reshape(shape)
            return cls(
                output_activation=document["output_activation"],
                sigma=float(document["sigma"]),
                seed=int(document["seed"]),
                init_scale=document.get("init_scale", "std"),
                **blocks,
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed model file: missing or invalid field {e}") from e

    def save_weights(self, path):
        with open(path, "wb") as fp:
            fp.write(self.serialize())

    @classmethod
    def load_weights(cls, path):
        with open(path, "rb") as fp:
            return cls.deserialize(fp.read())


def init_gaussian(n_in, n_hid, n_out, sigma, seed, output_activation="linear", init_scale="std"):
    """
    Every weight i.i.d. Gaussian from a generator seeded by 'seed'; biases start at zero.
    With init_scale "std" sigma is the standard deviation. With "spectral" the standard
    deviation is sigma * sqrt(n_hid), which puts the spectral radius of w_rec near sigma * n_hid.
    """
    if min(n_in, n_hid, n_out) < 1:
        raise ValueError(f"network dimensions must be positive, got n_in={n_in} n_hid={n_hid} n_out={n_out}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if init_scale not in INIT_SCALES:
        raise ValueError(f"init_scale must be one of {INIT_SCALES}, got '{init_scale}'")
    std = sigma if init_scale == "std" else sigma * math.sqrt(n_hid)
    generator = make_generator(seed)

    def normal(*shape):
        return torch.randn(*shape, generator=generator, dtype=linalg.DTYPE) * std

    return SrnParams(
        w_in=normal(n_in, n_hid),
        w_rec=normal(n_hid, n_hid),
        w_out=normal(n_hid, n_out),
        b=linalg.zeros(n_hid),
        output_activation=output_activation,
        sigma=float(sigma),
        seed=int(seed),
        init_scale=init_scale,
    )


@dataclass
class ForwardTrace:
    """
    Everything BPTT and the norm differential need from a forward pass over
    a batch of N sequences of T steps. Step k = 1..T lives at index k - 1 of
    u, a and fprime; z holds z(0)..z(T) at indices 0..T.
    """

    u: torch.Tensor  # (N, T, n_in)
    a: torch.Tensor  # (N, T, n_hid)
    z: torch.Tensor  # (N, T + 1, n_hid)
    fprime: torch.Tensor  # (N, T, n_hid)
    o: torch.Tensor  # (N, n_out), presynaptic output
    y: torch.Tensor  # (N, n_out)
    output_activation: str

    @property
    def steps(self):
        return self.a.shape[1]

    @property
    def batch_size(self):
        return self.a.shape[0]

    def input(self, k):
        return self.u[:, k - 1]

    def state(self, k):
        return self.z[:, k]

    def derivative(self, k):
        """Diagonal of D_k; z(0) is not an activation output so D_0 is the identity"""
        if k == 0:
            return torch.ones_like(self.z[:, 0])
        return self.fprime[:, k - 1]


def forward(params, seq, z0=None):
    """
    Runs the network over 'seq' of shape (T, n_in) or (N, T, n_in).
    The readout happens at the final step only.
    """
    u = seq.unsqueeze(0) if seq.dim() == 2 else seq
    if u.dim() != 3 or u.shape[2] != params.n_in:
        raise ShapeError(f"input of shape {tuple(seq.shape)} does not match n_in={params.n_in}")
    u = u.to(linalg.DTYPE)
    n_seq, n_steps = u.shape[0], u.shape[1]
    if n_steps < 1:
        raise ShapeError("sequence must contain at least one step")
    if z0 is None:
        z0 = linalg.zeros(n_seq, params.n_hid)
    elif z0.dim() == 1:
        z0 = z0.expand(n_seq, -1)
    if z0.shape != (n_seq, params.n_hid):
        raise ShapeError(f"z0 of shape {tuple(z0.shape)} does not match n_hid={params.n_hid}")

    a = linalg.zeros(n_seq, n_steps, params.n_hid)
    z = linalg.zeros(n_seq, n_steps + 1, params.n_hid)
    z[:, 0] = z0
    for k in range(1, n_steps + 1):
        a_k = linalg.row_vec_mat(u[:, k - 1], params.w_in) + linalg.row_vec_mat(z[:, k - 1], params.w_rec) + params.b
        if not torch.isfinite(a_k).all():
            raise NumericalError(f"non-finite presynaptic activation at step {k}")
        a[:, k - 1] = a_k
        z[:, k] = torch.tanh(a_k)
    fprime = 1.0 - z[:, 1:] ** 2

    o = linalg.row_vec_mat(z[:, n_steps], params.w_out)
    if params.output_activation == "softmax":
        y = torch.softmax(o, dim=-1)
    else:
        y = o
    check_finite(y, "network output")
    return ForwardTrace(u=u, a=a, z=z, fprime=fprime, o=o, y=y, output_activation=params.output_activation)


@dataclass
class LossResult:
    loss: torch.Tensor  # (N,) per-sequence error E
    output_delta: torch.Tensor  # (N, n_out) dE/do
    correct: torch.Tensor  # (N,) bool

    @property
    def mean_loss(self):
        return float(self.loss.mean())

    @property
    def accuracy(self):
        return float(self.correct.to(linalg.DTYPE).mean())


def output_loss(trace, target, kind, tolerance=0.04):
    """
    mse:           E = 1/2 |y - t|^2, delta = y - t, correct iff max|y - t| < tolerance
    cross_entropy: E = -log y[c],     delta = y - onehot(c), correct iff argmax y = c
    """
    if LOSS_KINDS[trace.output_activation] != kind:
        raise ValueError(f"loss '{kind}' does not pair with a {trace.output_activation} output layer")
    n_seq, n_out = trace.y.shape
    if kind == "mse":
        t = torch.as_tensor(target, dtype=linalg.DTYPE)
        if t.numel() != n_seq * n_out:
            raise ShapeError(f"target of shape {tuple(t.shape)} does not match output {tuple(trace.y.shape)}")
        t = t.reshape(n_seq, n_out)
        diff = trace.y - t
        loss = 0.5 * (diff**2).sum(dim=-1)
        correct = diff.abs().amax(dim=-1) < tolerance
        return LossResult(loss=loss, output_delta=diff, correct=correct)

    classes = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    if classes.shape[0] != n_seq:
        raise ShapeError(f"{classes.shape[0]} class targets for {n_seq} sequences")
    if ((classes < 0) | (classes >= n_out)).any():
        raise ValueError(f"class index outside [0, {n_out})")
    rows = torch.arange(n_seq)
    loss = -torch.log_softmax(trace.o, dim=-1)[rows, classes]
    onehot = torch.zeros_like(trace.y)
    onehot[rows, classes] = 1.0
    correct = trace.y.argmax(dim=-1) == classes
    return LossResult(loss=loss, output_delta=trace.y - onehot, correct=correct)
