"""PA-modelling datasets for the IQ delay-line network and the Walsh-domain
network, plus the accuracy/complexity sweep.

Both dataset builders accept a ``scale`` factor applied to inputs and targets
alike. Networks see unit-RMS features that way, and because the skip
connection and NMSE are both invariant to a common scale, nothing else changes.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn, walsh
from .errors import DimensionError, InfeasibleBudgetError, InsufficientDataError, InvalidSpecError
from .metrics import F_SYMB_IQ, flops, ls_gain, to_db

IQ = "IQ"
WALSH = "Walsh"


@dataclass(frozen=True)
class R2tdnnFeatureSpec:
    memory_depth: int = 4
    envelope_orders: tuple = (1, 2)

    def __post_init__(self):
        if self.memory_depth < 0:
            raise InvalidSpecError("memory_depth must be >= 0")
        if any(int(k) < 1 for k in self.envelope_orders):
            raise InvalidSpecError("envelope orders must be >= 1")
        object.__setattr__(self, "envelope_orders", tuple(int(k) for k in self.envelope_orders))

    @property
    def input_size(self):
        return 2 * (self.memory_depth + 1) + len(self.envelope_orders)

    output_size = 2


@dataclass(frozen=True)
class WdnnFeatureSpec:
    walsh_order: int = 64
    normalization: str = walsh.ORTHONORMAL

    def __post_init__(self):
        walsh._check_order(self.walsh_order)
        walsh._check_norm(self.normalization)

    @property
    def input_size(self):
        return 2 * self.walsh_order

    @property
    def output_size(self):
        return 2 * self.walsh_order


def _raw(w):
    return np.asarray(getattr(w, "samples", w), dtype=np.complex128)


def iq_features(x, spec, pad_history=False):
    """Delay-line + envelope feature matrix.

    Without ``pad_history`` row ``r`` describes sample ``r + memory_depth``;
    with it, history before the first sample is zero and every sample gets a row.
    """
    s = _raw(x)
    md = spec.memory_depth
    if pad_history:
        s = np.concatenate([np.zeros(md, dtype=np.complex128), s])
    n_rows = s.size - md
    if n_rows < 1:
        raise InsufficientDataError(f"need more than {md} samples for the delay line")
    feats = np.empty((n_rows, spec.input_size))
    for m in range(md + 1):
        tap = s[md - m : md - m + n_rows]
        feats[:, 2 * m] = tap.real
        feats[:, 2 * m + 1] = tap.imag
    env = np.abs(s[md:])
    for j, k in enumerate(spec.envelope_orders):
        feats[:, 2 * (md + 1) + j] = env**k
    return feats


def build_iq_dataset(x, y, spec=R2tdnnFeatureSpec(), scale=1.0):
    xs, ys = _raw(x), _raw(y)
    if xs.shape != ys.shape:
        raise DimensionError(f"input/output lengths differ: {xs.size} vs {ys.size}")
    if xs.size <= spec.memory_depth:
        raise InsufficientDataError("waveform shorter than the delay line")
    feats = iq_features(xs * scale, spec)
    tgt = ys[spec.memory_depth :] * scale
    return nn.Dataset(feats, np.stack([tgt.real, tgt.imag], axis=1), identity_slice=(0, 1))


def walsh_features(x, spec):
    blocks, _ = walsh.blockize(x, spec.walsh_order)
    return walsh.pack_real(walsh.fast_forward(blocks, spec.walsh_order, spec.normalization))


def build_walsh_dataset(x, y, spec=WdnnFeatureSpec(), scale=1.0, stride=None):
    """Packed Walsh coefficients of aligned blocks of ``x`` (inputs) and ``y`` (targets).

    ``stride`` defaults to the Walsh order: non-overlapping blocks,
    ``floor(len / N)`` rows. A smaller stride adds shifted block alignments
    of the same waveform.
    """
    xs, ys = _raw(x), _raw(y)
    if xs.shape != ys.shape:
        raise DimensionError(f"input/output lengths differ: {xs.size} vs {ys.size}")
    order = spec.walsh_order
    if stride is None or stride == order:
        return nn.Dataset(walsh_features(xs * scale, spec), walsh_features(ys * scale, spec))
    if not 1 <= stride <= order:
        raise InvalidSpecError(f"stride must lie in [1, {order}]")
    walsh.blockize(xs, order)  # length check
    idx = np.arange(0, xs.size - order + 1, stride)[:, None] + np.arange(order)

    def coeffs(s):
        return walsh.pack_real(walsh.fast_forward(s[idx] * scale, order, spec.normalization))

    return nn.Dataset(coeffs(xs), coeffs(ys))


def walsh_synthesis(packed, spec):
    """Inverse of :func:`walsh_features`: packed coefficient rows back to samples."""
    coeffs = walsh.unpack_real(packed)
    return walsh.deblockize(walsh.fast_inverse(coeffs, spec.walsh_order, spec.normalization))


def feature_scale(x):
    """Common factor that brings ``x`` to unit RMS."""
    s = _raw(x)
    p = np.mean(s.real**2 + s.imag**2)
    if not p > 0:
        raise InsufficientDataError("cannot scale features of a zero-power waveform")
    return float(1.0 / np.sqrt(p))


def evaluate_forward_model(params, dataset_test):
    """Test NMSE in dB (floored at -200 dB)."""
    if (
        dataset_test.input_size != params.spec.input_size
        or dataset_test.output_size != params.spec.output_size
    ):
        raise DimensionError("parameters do not match the dataset shape")
    pred = nn.forward_batch(params, dataset_test.inputs)
    return to_db(nn.nmse_loss(pred, dataset_test.targets)[0])


def family_f_symb(family, walsh_order=64, f_symb=F_SYMB_IQ):
    return f_symb / walsh_order if family == WALSH else f_symb


SWEEP_COLUMNS = [
    "family", "budget_tflops", "k", "n", "I", "O", "flops",
    "train_nmse_db", "val_nmse_db", "test_nmse_db", "epochs_ran", "seed",
]


@dataclass
class SweepRow:
    family: str
    budget_tflops: float
    spec: nn.MlpSpec = None
    flops: float = None
    train_nmse_db: float = None
    val_nmse_db: float = None
    test_nmse_db: float = None
    epochs_ran: int = None
    seed: int = None
    candidates: list = field(default_factory=list, repr=False)

    @property
    def feasible(self):
        return self.spec is not None

    def as_csv(self):
        if not self.feasible:
            return [self.family, _fmt(self.budget_tflops)] + ["infeasible"] + [""] * 9
        s = self.spec
        return [
            self.family, _fmt(self.budget_tflops), s.hidden_layers, s.hidden_width,
            s.input_size, s.output_size, _fmt(self.flops), _fmt(self.train_nmse_db),
            _fmt(self.val_nmse_db), _fmt(self.test_nmse_db), self.epochs_ran, self.seed,
        ]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def forward_datasets(x, y, iq_spec=R2tdnnFeatureSpec(), walsh_spec=WdnnFeatureSpec(),
                     walsh_stride=None):
    """Gain-normalized datasets for both families from one input/output pair."""
    g = ls_gain(x, y)
    scale = feature_scale(x)
    y_norm = _raw(y) / g
    return {
        IQ: build_iq_dataset(x, y_norm, iq_spec, scale),
        WALSH: build_walsh_dataset(x, y_norm, walsh_spec, scale, walsh_stride),
    }


def complexity_sweep(x, y, budgets_tflops, families=(IQ, WALSH), search_spaces=None,
                     config=nn.TrainConfig(), iq_spec=R2tdnnFeatureSpec(),
                     walsh_spec=WdnnFeatureSpec(), jobs=1, activations=None, walsh_stride=None):
    """Grid-search the best forward model per family and FLOPS tier.

    ``search_spaces`` maps family -> list of ``(k, n)``; ``activations``
    optionally maps family -> activation name (default tanh). The output is divided
    by its least-squares gain against the input before modelling; NMSE is
    unaffected by that common scale.
    """
    budgets = list(budgets_tflops)
    if budgets != sorted(budgets):
        raise InvalidSpecError("budgets must be sorted ascending")
    data = forward_datasets(x, y, iq_spec, walsh_spec, walsh_stride)
    activations = activations or {}
    rows = []
    for family in families:
        f_symb = family_f_symb(family, walsh_spec.walsh_order)
        dataset = data[family]
        _, _, te = nn.split_rows(len(dataset), config.split)
        seed = nn.derive_seed(config.seed, f"sweep:{family}")
        # each candidate trains once; every tier then picks from the ones it can afford
        try:
            _, pool = nn.grid_search(
                budgets[-1] * 1e12, dataset, search_spaces[family], nn._with_seed(config, seed),
                flops_fn=lambda spec, f=f_symb: flops(spec, f), jobs=jobs,
                activation=activations.get(family, "tanh"),
            )
        except InfeasibleBudgetError:
            pool = []
        for budget in budgets:
            affordable = [c for c in pool if c.flops <= budget * 1e12]
            if not affordable:
                rows.append(SweepRow(family, budget, seed=seed))
                continue
            best = min(affordable, key=nn.candidate_rank)
            h = best.history
            rows.append(SweepRow(
                family, budget, best.spec, best.flops,
                to_db(h.train_loss[h.best_epoch]), to_db(h.best_val_loss),
                evaluate_forward_model(best.params, dataset.rows(te)),
                h.epochs_ran, seed, affordable,
            ))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SWEEP_COLUMNS)
        for row in rows:
            out.writerow(row.as_csv())
