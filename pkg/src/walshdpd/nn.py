"""Feedforward network with an optional input-to-output skip connection,
trained on NMSE with hand-written backpropagation and Adam.

Weights are stored as ``(fan_out, fan_in)`` matrices so a layer computes
``h @ W.T + b`` on row-major batches.
"""

import base64
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    InfeasibleBudgetError,
    InsufficientDataError,
    InvalidSpecError,
    NumericError,
    UndefinedReferenceError,
)

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("tanh", "relu")
INITS = ("glorot", "zero", "zero_output")


def derive_seed(master_seed, stage):
    """Stable 64-bit seed for a named pipeline stage."""
    digest = hashlib.sha256(f"{int(master_seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class MlpSpec:
    input_size: int
    output_size: int
    hidden_layers: int = 1
    hidden_width: int = 16
    activation: str = "tanh"
    residual: bool = True
    identity_slice: tuple = None

    def __post_init__(self):
        if min(self.input_size, self.output_size, self.hidden_layers, self.hidden_width) < 1:
            raise InvalidSpecError(f"all network dimensions must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpecError(f"unknown activation {self.activation!r}")
        if self.residual:
            if self.identity_slice is None:
                if self.input_size < self.output_size:
                    raise InvalidSpecError("residual net needs input_size >= output_size")
                object.__setattr__(self, "identity_slice", tuple(range(self.output_size)))
            else:
                sl = tuple(int(i) for i in self.identity_slice)
                if len(sl) != self.output_size or not all(0 <= i < self.input_size for i in sl):
                    raise InvalidSpecError("identity_slice must pick output_size input features")
                object.__setattr__(self, "identity_slice", sl)
        elif self.identity_slice is not None:
            object.__setattr__(self, "identity_slice", None)

    @property
    def layer_sizes(self):
        return (
            [self.input_size]
            + [self.hidden_width] * self.hidden_layers
            + [self.output_size]
        )

    def to_json(self):
        return {
            "I": self.input_size,
            "O": self.output_size,
            "k": self.hidden_layers,
            "n": self.hidden_width,
            "activation": self.activation,
            "residual": self.residual,
            "identity_slice": list(self.identity_slice) if self.identity_slice else None,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            input_size=obj["I"],
            output_size=obj["O"],
            hidden_layers=obj["k"],
            hidden_width=obj["n"],
            activation=obj.get("activation", "tanh"),
            residual=bool(obj["residual"]),
            identity_slice=obj.get("identity_slice"),
        )


@dataclass(eq=False)
class MlpParams:
    spec: MlpSpec
    weights: list
    biases: list

    def copy(self):
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        return self.weights + self.biases

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    identity_slice: tuple = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.targets, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DimensionError(f"inputs {x.shape} and targets {y.shape} do not pair up")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_size(self):
        return self.inputs.shape[1]

    @property
    def output_size(self):
        return self.targets.shape[1]

    def rows(self, sl):
        return Dataset(self.inputs[sl], self.targets[sl], self.identity_slice)

    @staticmethod
    def concat(parts):
        """Stack datasets row-wise, keeping their order."""
        parts = list(parts)
        if len({(d.input_size, d.output_size, d.identity_slice) for d in parts}) != 1:
            raise DimensionError("datasets to concatenate must share their layout")
        return Dataset(
            np.vstack([d.inputs for d in parts]), np.vstack([d.targets for d in parts]),
            parts[0].identity_slice,
        )

    def spec(self, hidden_layers, hidden_width, activation="tanh", residual=True):
        return MlpSpec(
            self.input_size,
            self.output_size,
            hidden_layers,
            hidden_width,
            activation,
            residual,
            self.identity_slice if residual else None,
        )


def init_mlp(spec, seed):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def zero_mlp(spec):
    sizes = spec.layer_sizes
    return MlpParams(
        spec,
        [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
    )


def initial_params(spec, init, seed):
    if init == "zero":
        return zero_mlp(spec)
    params = init_mlp(spec, seed)
    if init == "zero_output":
        params.weights[-1][:] = 0.0
    return params


def _skip(spec, x):
    sl = spec.identity_slice
    if sl == tuple(range(len(sl))):
        return x[:, : len(sl)]
    return x[:, list(sl)]


def _act(spec, z):
    if spec.activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(spec, h):
    if spec.activation == "tanh":
        return 1.0 - h * h
    return (h > 0).astype(h.dtype)


def _forward_trace(params, x):
    spec = params.spec
    hs = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = _act(spec, h @ w.T + b)
        hs.append(h)
    out = h @ params.weights[-1].T + params.biases[-1]
    if spec.residual:
        out = out + _skip(spec, x)
    return out, hs


def forward_batch(params, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_size:
        raise DimensionError(
            f"expected (rows, {params.spec.input_size}) inputs, got {x.shape}"
        )
    return _forward_trace(params, x)[0]


def forward_mlp(params, input_row):
    row = np.asarray(input_row, dtype=np.float64)
    if row.ndim != 1:
        raise DimensionError("forward_mlp takes a single input row")
    return forward_batch(params, row[None, :])[0]


def nmse_loss(pred, target):
    """Linear-scale NMSE ``sum|pred - target|^2 / sum|target|^2`` and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    ref = float(np.sum(target * target))
    if not ref > 0:
        raise UndefinedReferenceError("NMSE target has zero power")
    err = pred - target
    return float(np.sum(err * err)) / ref, (2.0 / ref) * err


def backward_mlp(params, inputs, targets):
    """Loss and gradients ``(dW list, db list)`` of NMSE over one batch."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_size:
        raise DimensionError(f"expected (rows, {params.spec.input_size}) inputs, got {x.shape}")
    out, hs = _forward_trace(params, x)
    loss, delta = nmse_loss(out, targets)
    n_layers = len(params.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        h_in = hs[layer]
        dW[layer] = delta.T @ h_in
        db[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ params.weights[layer]) * _act_grad(params.spec, h_in)
    return loss, dW, db


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper):
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **hyper)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    ``grads`` is a flat list aligned with ``params.arrays()``.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 10000
    patience: int = 50
    split: tuple = (0.60, 0.25, 0.15)
    batch_size: int = 1024
    seed: int = 0
    learning_rate: float = 1e-3
    init: str = "glorot"  # "zero", or "zero_output" (residual nets start as the identity)
    lr_milestones: tuple = ()  # epochs after which the learning rate is multiplied by lr_gamma
    lr_gamma: float = 0.3

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise InvalidSpecError(f"split {self.split} must be non-negative and sum to 1")
        if self.patience >= self.max_epochs:
            raise InvalidSpecError("patience must be smaller than max_epochs")
        if self.batch_size < 1:
            raise InvalidSpecError("batch_size must be positive")
        if self.init not in INITS:
            raise InvalidSpecError(f"unknown init {self.init!r}")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)) or any(
            m < 1 for m in self.lr_milestones
        ):
            raise InvalidSpecError("lr_milestones must be strictly increasing positive epochs")
        if not 0 < self.lr_gamma <= 1:
            raise InvalidSpecError("lr_gamma must lie in (0, 1]")

    def learning_rate_at(self, epoch):
        """Step schedule: the rate used while running ``epoch`` (1-based)."""
        passed = sum(1 for m in self.lr_milestones if epoch > m)
        return self.learning_rate * self.lr_gamma**passed


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    test_loss: float = float("nan")

    @property
    def epochs_ran(self):
        return len(self.train_loss) - 1

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch]


MIN_ROWS = 100


def split_rows(n_rows, split=(0.60, 0.25, 0.15)):
    """Contiguous train/validation/test slices."""
    n_train = int(n_rows * split[0] + 1e-9)
    n_val = int(n_rows * split[1] + 1e-9)
    return slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, n_rows)


def _loss(params, data):
    return nmse_loss(forward_batch(params, data.inputs), data.targets)[0]


def train(spec, dataset, config=TrainConfig(), params=None):
    """Mini-batch Adam on NMSE with early stopping on the validation split.

    Returns the parameters from the epoch with the lowest validation loss.
    Entry 0 of the history is the untrained (or supplied) network.
    """
    if len(dataset) < MIN_ROWS:
        raise InsufficientDataError(f"need at least {MIN_ROWS} rows, got {len(dataset)}")
    if dataset.input_size != spec.input_size or dataset.output_size != spec.output_size:
        raise DimensionError("dataset shape does not match the network spec")
    tr_sl, va_sl, te_sl = split_rows(len(dataset), config.split)
    train_set, val_set, test_set = dataset.rows(tr_sl), dataset.rows(va_sl), dataset.rows(te_sl)
    if len(train_set) == 0 or len(val_set) == 0:
        raise InsufficientDataError("train and validation partitions must be non-empty")

    rng = np.random.default_rng(config.seed)
    if params is None:
        params = initial_params(spec, config.init, rng.integers(2**63))
    else:
        params = params.copy()
    state = AdamState.for_params(params, learning_rate=config.learning_rate)
    history = TrainingHistory()
    history.train_loss.append(_loss(params, train_set))
    history.val_loss.append(_loss(params, val_set))
    best = params.copy()
    n_train = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        state.learning_rate = config.learning_rate_at(epoch)
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, dW, db = backward_mlp(params, train_set.inputs[idx], train_set.targets[idx])
            adam_step(params, dW + db, state)
        history.train_loss.append(_loss(params, train_set))
        history.val_loss.append(_loss(params, val_set))
        if history.val_loss[-1] < history.val_loss[history.best_epoch]:
            history.best_epoch = epoch
            best = params.copy()
        elif epoch - history.best_epoch >= config.patience:
            break
    if len(test_set):
        history.test_loss = _loss(best, test_set)
    return best, history


@dataclass
class Candidate:
    spec: MlpSpec
    flops: float
    params: MlpParams = None
    history: TrainingHistory = None


def _train_job(args):
    spec, dataset, config = args
    return train(spec, dataset, config)


def grid_search(budget_flops, dataset, search_space, config=TrainConfig(), flops_fn=None,
                jobs=1, activation="tanh", residual=True):
    """Train every ``(k, n)`` within budget and keep the best on validation NMSE.

    Ties go to fewer FLOPS, then fewer hidden layers. Returns
    ``(best Candidate, list of all evaluated Candidates)``.
    """
    from .metrics import flops as _flops

    flops_fn = flops_fn or _flops
    feasible = []
    for k, n in search_space:
        spec = dataset.spec(k, n, activation, residual)
        cost = flops_fn(spec)
        if cost <= budget_flops:
            feasible.append(Candidate(spec, cost))
    if not feasible:
        raise InfeasibleBudgetError(f"no candidate fits within {budget_flops:.4g} FLOPS")
    jobs_args = [
        (
            c.spec,
            dataset,
            _with_seed(config, derive_seed(config.seed, f"k{c.spec.hidden_layers}n{c.spec.hidden_width}")),
        )
        for c in feasible
    ]
    if jobs > 1 and len(feasible) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_job, jobs_args))
    else:
        results = [_train_job(a) for a in jobs_args]
    for cand, (params, history) in zip(feasible, results):
        cand.params, cand.history = params, history
    return min(feasible, key=candidate_rank), feasible


def candidate_rank(c):
    """Sort key for trained candidates: validation loss, then FLOPS, then depth."""
    return (c.history.best_val_loss, c.flops, c.spec.hidden_layers)


def _with_seed(config, seed):
    from dataclasses import replace

    return replace(config, seed=seed)


def _encode(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s, count):
    try:
        raw = base64.b64decode(s, validate=True)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad base64 payload: {exc}") from None
    if len(raw) != 8 * count:
        raise FormatError(f"payload holds {len(raw) // 8} values, expected {count}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def params_to_json(params):
    return {
        "format_version": CHECKPOINT_VERSION,
        "spec": params.spec.to_json(),
        "layers": [
            {"rows": w.shape[0], "cols": w.shape[1], "weights": _encode(w), "bias": _encode(b)}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def params_from_json(obj):
    if obj.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {obj.get('format_version')!r}")
    try:
        spec = MlpSpec.from_json(obj["spec"])
        weights, biases = [], []
        for layer in obj["layers"]:
            r, c = int(layer["rows"]), int(layer["cols"])
            weights.append(_decode(layer["weights"], r * c).reshape(r, c))
            biases.append(_decode(layer["bias"], r))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from None
    sizes = spec.layer_sizes
    if [w.shape for w in weights] != list(zip(sizes[1:], sizes[:-1])):
        raise FormatError("layer shapes do not match the stored spec")
    return MlpParams(spec, weights, biases)


def save_params(params, path):
    with open(path, "w") as fh:
        json.dump(params_to_json(params), fh, indent=1)
        fh.write("\n")


def load_params(path):
    with open(path) as fh:
        try:
            return params_from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
