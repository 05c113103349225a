"""Predistorter training and evaluation.

The IQ teacher is trained by indirect learning: a post-inverse fitted on
``(y / G, x)`` pairs, then placed in front of the amplifier. The Walsh-domain
student learns to reproduce the teacher's predistorted waveform block by block
(knowledge distillation), or, without a teacher, is trained directly as a
Walsh-domain post-inverse.

Both predistorters carry the feature scale they were trained with, so applying
one to a new waveform uses the same operating point.
"""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, pa_model, walsh
from .behavioral import (
    R2tdnnFeatureSpec,
    WdnnFeatureSpec,
    build_iq_dataset,
    build_walsh_dataset,
    feature_scale,
    iq_features,
    walsh_synthesis,
)
from .errors import DimensionError, FormatError, InvalidSpecError, NumericError
from .metrics import PsdConfig, aclr, amam_ampm, evm, ls_gain, nmse, psd, to_db
from .signal import IqWaveform, papr

TEACHER = "teacher"
STUDENT = "student"


def _raw(w):
    return np.asarray(getattr(w, "samples", w), dtype=np.complex128)


def _wrap(samples, like):
    return like.with_samples(samples) if isinstance(like, IqWaveform) else samples


def target_gain(pa):
    """Linear gain the linearized chain should show.

    The small-signal gain for a surrogate; a replayed amplifier has no
    small-signal probe, so its least-squares gain on the recorded pair is used.
    """
    if isinstance(pa, pa_model.ReplayPA):
        return ls_gain(pa.input_ref, pa.output_ref)
    return pa_model.small_signal_gain(pa)


@dataclass(eq=False)
class IqPredistorter:
    params: nn.MlpParams
    features: R2tdnnFeatureSpec = R2tdnnFeatureSpec()
    scale: float = 1.0

    def __post_init__(self):
        if self.params.spec.input_size != self.features.input_size or self.params.spec.output_size != 2:
            raise DimensionError("teacher network does not match the IQ feature layout")

    def apply(self, x):
        """Predistort every sample of ``x`` (history before the start is zero)."""
        s = _raw(x)
        out = nn.forward_batch(self.params, iq_features(s * self.scale, self.features, pad_history=True))
        return _wrap((out[:, 0] + 1j * out[:, 1]) / self.scale, x)

    def to_json(self):
        return {
            "kind": TEACHER,
            "memory_depth": self.features.memory_depth,
            "envelope_orders": list(self.features.envelope_orders),
            "scale": float(self.scale),
            "network": nn.params_to_json(self.params),
        }


@dataclass(eq=False)
class WalshPredistorter:
    params: nn.MlpParams
    features: WdnnFeatureSpec = WdnnFeatureSpec()
    scale: float = 1.0

    def __post_init__(self):
        size = self.features.input_size
        if self.params.spec.input_size != size or self.params.spec.output_size != size:
            raise DimensionError("student network does not match the Walsh order")

    def apply(self, x):
        """Predistort whole blocks of ``x``; a trailing partial block is dropped."""
        s = _raw(x)
        blocks, _ = walsh.blockize(s * self.scale, self.features.walsh_order)
        coeffs = walsh.pack_real(
            walsh.fast_forward(blocks, self.features.walsh_order, self.features.normalization)
        )
        out = walsh_synthesis(nn.forward_batch(self.params, coeffs), self.features)
        return _wrap(out / self.scale, x)

    def to_json(self):
        return {
            "kind": STUDENT,
            "walsh_order": self.features.walsh_order,
            "normalization": self.features.normalization,
            "scale": float(self.scale),
            "network": nn.params_to_json(self.params),
        }


def predistorter_from_json(obj):
    try:
        kind = obj["kind"]
        params = nn.params_from_json(obj["network"])
        scale = float(obj["scale"])
        if kind == TEACHER:
            feats = R2tdnnFeatureSpec(int(obj["memory_depth"]), tuple(obj["envelope_orders"]))
            return IqPredistorter(params, feats, scale)
        if kind == STUDENT:
            feats = WdnnFeatureSpec(int(obj["walsh_order"]), obj["normalization"])
            return WalshPredistorter(params, feats, scale)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed predistorter: {exc}") from None
    raise FormatError(f"unknown predistorter kind {kind!r}")


def save_predistorter(pd, path):
    with open(path, "w") as fh:
        json.dump(pd.to_json(), fh, indent=1)
        fh.write("\n")


def load_predistorter(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return predistorter_from_json(obj)


def _residual_init(config):
    # the default Glorot start is swapped for an identity start (zero output layer)
    return config if config.init != "glorot" else replace(config, init="zero_output")


def train_teacher(x, pa, hidden_layers=2, hidden_width=32, config=nn.TrainConfig(),
                  features=R2tdnnFeatureSpec(), activation="tanh"):
    """Indirect-learning IQ predistorter. Returns ``(teacher, history)``."""
    xs = _raw(x)
    y = _raw(pa_model.run_pa(pa, xs))
    g = target_gain(pa)
    scale = feature_scale(xs)
    data = build_iq_dataset(y / g, xs, features, scale)
    spec = data.spec(hidden_layers, hidden_width, activation)
    params, history = nn.train(spec, data, _residual_init(config))
    return IqPredistorter(params, features, scale), history


@dataclass(frozen=True, eq=False)
class KdDataset:
    """Walsh-packed x blocks paired with Walsh-packed teacher-output blocks."""

    data: nn.Dataset
    features: WdnnFeatureSpec
    scale: float

    def __post_init__(self):
        n = self.features.input_size
        if self.data.input_size != n or self.data.output_size != n:
            raise DimensionError(f"KD rows must be {n} wide on both sides")

    def __len__(self):
        return len(self.data)


def distill(teacher, x, walsh_order=64, stride=None, normalization=walsh.ORTHONORMAL,
            transfer=()):
    """Predistorted waveform ``u`` from the teacher and the KD pairs Walsh(x) -> Walsh(u).

    ``transfer`` holds further drive-level waveforms for the teacher to label.
    They enlarge the KD set without any extra amplifier measurements; their
    rows follow those of ``x``.
    """
    features = WdnnFeatureSpec(walsh_order, normalization)
    u = teacher.apply(x)
    s = teacher.scale
    parts = [build_walsh_dataset(x, u, features, s, stride)]
    for w in transfer:
        parts.append(build_walsh_dataset(w, teacher.apply(w), features, s, stride))
    return u, KdDataset(nn.Dataset.concat(parts), features, s)


def pretrain_student(kd, hidden_layers=1, hidden_width=256, config=nn.TrainConfig(),
                     activation="relu"):
    """Fit the Walsh-domain student to the KD pairs. Returns ``(student, history)``."""
    spec = kd.data.spec(hidden_layers, hidden_width, activation)
    params, history = nn.train(spec, kd.data, _residual_init(config))
    return WalshPredistorter(params, kd.features, kd.scale), history


def walsh_ila_dataset(x, pa, features=WdnnFeatureSpec(), stride=None, scale=None, transfer=()):
    """Walsh-domain post-inverse pairs Walsh(y / G) -> Walsh(x), without a teacher.

    Each waveform in ``transfer`` is amplified as well, so the rows cover the
    same inputs a distilled student would see.
    """
    xs = _raw(x)
    s = feature_scale(xs) if scale is None else scale
    g = target_gain(pa)
    parts = []
    for w in (xs, *transfer):
        w = _raw(w)
        y = _raw(pa_model.run_pa(pa, w))
        parts.append(build_walsh_dataset(y / g, w, features, s, stride))
    return KdDataset(nn.Dataset.concat(parts), features, s)


def train_student_ila(x, pa, hidden_layers=1, hidden_width=256, config=nn.TrainConfig(),
                      features=WdnnFeatureSpec(), stride=None, activation="relu", transfer=()):
    """Walsh-domain student trained by indirect learning only (no teacher)."""
    return pretrain_student(
        walsh_ila_dataset(x, pa, features, stride, transfer=transfer), hidden_layers, hidden_width,
        config, activation,
    )


def apply_dpd(x, student):
    return student.apply(x)


def finetune_student(student, x, pa, config=nn.TrainConfig(), epochs=None, stride=None):
    """Indirect-learning refinement of a pretrained student.

    The post-inverse pairs come from the amplifier's response to the student's
    own predistorted waveform. Training starts from the pretrained weights and
    keeps the best validation epoch, whose loss cannot exceed the starting one.
    ``epochs=0`` returns the student unchanged.
    """
    if epochs is not None:
        if epochs < 0:
            raise InvalidSpecError("epochs must be non-negative")
        if epochs == 0:
            return WalshPredistorter(student.params.copy(), student.features, student.scale), None
        config = replace(config, max_epochs=epochs, patience=min(config.patience, max(epochs - 1, 1)))
        if config.patience >= config.max_epochs:
            config = replace(config, max_epochs=config.patience + 1)
    u = student.apply(x)
    y = _raw(pa_model.run_pa(pa, u))
    s = student.scale
    data = build_walsh_dataset(y / target_gain(pa), u, student.features, s, stride)
    params, history = nn.train(student.params.spec, data, config, params=student.params)
    return WalshPredistorter(params, student.features, s), history


@dataclass
class DpdChainReport:
    evm_percent: float
    aclr_lower_db: float
    aclr_upper_db: float
    aclr_worst_db: float
    nmse_db: float
    papr_in_db: float
    papr_predistorted_db: float
    psd_freqs: np.ndarray = field(repr=False)
    psd_before_db: np.ndarray = field(repr=False)
    psd_after_db: np.ndarray = field(repr=False)
    am_in: np.ndarray = field(repr=False)
    am_out: np.ndarray = field(repr=False)
    pm_deg: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        scalars = [
            self.evm_percent, self.aclr_lower_db, self.aclr_upper_db, self.aclr_worst_db,
            self.nmse_db, self.papr_in_db, self.papr_predistorted_db,
        ]
        if not all(np.isfinite(scalars)):
            raise NumericError("chain report contains non-finite figures")
        if self.aclr_worst_db != max(self.aclr_lower_db, self.aclr_upper_db):
            raise NumericError("aclr_worst must be the larger of the two sides")

    def summary(self):
        return {
            "label": self.label,
            "evm_percent": self.evm_percent,
            "aclr_db": {
                "lower": self.aclr_lower_db,
                "upper": self.aclr_upper_db,
                "worst": self.aclr_worst_db,
            },
            "nmse_db": self.nmse_db,
            "papr_in_db": self.papr_in_db,
            "papr_predistorted_db": self.papr_predistorted_db,
        }


def _psd_db(freqs_density):
    freqs, dens = freqs_density
    return freqs, 10 * np.log10(np.maximum(dens, 1e-300))


def evaluate_chain(x, predistorter, pa, bandwidth=None, psd_cfg=PsdConfig(), label=""):
    """Run ``x`` (optionally predistorted) through the amplifier and measure it.

    EVM, NMSE and the AM-AM/AM-PM scatter use the output divided by its
    least-squares gain against ``x``. ``psd_before`` is the amplifier output
    without predistortion, ``psd_after`` with it. ``bandwidth`` defaults to the
    occupied band of ``x`` (one over its oversampling factor).
    """
    if not isinstance(x, IqWaveform):
        x = IqWaveform(x)
    if bandwidth is None:
        bandwidth = 1.0 / x.sample_rate
    u = x if predistorter is None else predistorter.apply(x)
    ref = x.samples[: len(u)]
    y_plain = _raw(pa_model.run_pa(pa, x))
    y = y_plain if predistorter is None else _raw(pa_model.run_pa(pa, u))
    lo, up, worst = aclr(y, bandwidth, psd_cfg)
    g = ls_gain(ref, y)
    y_norm = y / g
    am_in, am_out, pm = amam_ampm(ref, y_norm)
    freqs, before = _psd_db(psd(y_plain, psd_cfg))
    _, after = _psd_db(psd(y, psd_cfg))
    return DpdChainReport(
        evm_percent=evm(ref, y),
        aclr_lower_db=lo,
        aclr_upper_db=up,
        aclr_worst_db=worst,
        nmse_db=nmse(ref, y_norm),
        papr_in_db=papr(x),
        papr_predistorted_db=papr(u),
        psd_freqs=freqs,
        psd_before_db=before,
        psd_after_db=after,
        am_in=am_in,
        am_out=am_out,
        pm_deg=pm,
        label=label,
    )


def _num(v):
    return repr(float(v))


def write_psd_csv(freqs, psd_db, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["freq_norm", "psd_db"])
        for f, p in zip(freqs, psd_db):
            out.writerow([_num(f), _num(p)])


def write_amam_csv(report, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["|x|", "|y|", "phase_deg"])
        for a, b, c in zip(report.am_in, report.am_out, report.pm_deg):
            out.writerow([_num(a), _num(b), _num(c)])


def history_summary(history):
    """JSON-ready digest of a training run (``None`` passes through)."""
    if history is None:
        return None
    return {
        "epochs_ran": history.epochs_ran,
        "best_epoch": history.best_epoch,
        "train_nmse_db": to_db(history.train_loss[history.best_epoch]),
        "val_nmse_db": to_db(history.best_val_loss),
        "test_nmse_db": to_db(history.test_loss) if np.isfinite(history.test_loss) else None,
    }
