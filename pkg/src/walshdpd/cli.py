"""Command-line driver: one JSON config, reproducible artifacts.

Every random stage draws its seed from ``derive_seed(master_seed, stage)``,
so re-running a command with the same config rewrites identical files.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import copy
import json
import logging
import os
import sys

from . import behavioral, dpd, nn, pa_model, signal, walsh
from .errors import ConfigError, InvalidSpecError, NotFoundError, WalshDpdError
from .metrics import PsdConfig, flops

log = logging.getLogger("walshdpd")

DEFAULT_CONFIG = {
    "master_seed": 0,
    "output_dir": "walshdpd-out",
    "waveform": {
        "n_carriers": 256,
        "occupied_fraction": 0.1,
        "n_samples": 65536,
        "constellation": "QAM16",
    },
    "pa": {
        "kind": "default",  # default | coefficients | replay
        "coefficients_file": None,
        "replay_input": None,
        "replay_output": None,
        "max_lag": 32,
        "backoff_db": 0.0,
    },
    "walsh": {"order": 64, "normalization": walsh.ORTHONORMAL},
    "features": {"memory_depth": 4, "envelope_orders": [1, 2]},
    "sweep": {
        "budgets_tflops": [4, 16, 64, 256, 1024],
        "families": [behavioral.IQ, behavioral.WALSH],
        "search_space": {
            behavioral.IQ: [[1, 4], [1, 8], [1, 16], [2, 16], [1, 32], [2, 32], [3, 64]],
            behavioral.WALSH: [[1, 16], [1, 32], [1, 64], [1, 128], [1, 256], [1, 512], [1, 1024]],
        },
        "activation": {behavioral.IQ: "tanh", behavioral.WALSH: "relu"},
        "walsh_stride": 2,
        "train": {"max_epochs": 300, "patience": 50, "batch_size": 256, "learning_rate": 1e-3,
                  "lr_milestones": [150, 200, 250]},
    },
    "teacher": {
        "hidden_layers": 2,
        "hidden_width": 32,
        "activation": "tanh",
        "train": {"max_epochs": 300, "patience": 50, "batch_size": 1024, "learning_rate": 1e-3},
    },
    "student": {
        "hidden_layers": 1,
        "hidden_width": 1024,
        "activation": "relu",
        "stride": 16,
        "transfer_stimuli": 31,  # extra stimuli per training set (teacher-labelled with --kd)
        "train": {"max_epochs": 80, "patience": 20, "batch_size": 256, "learning_rate": 1e-3,
                  "lr_milestones": [40, 55, 70]},
    },
    "finetune": {
        "epochs": 100,
        "train": {"max_epochs": 100, "patience": 20, "batch_size": 256, "learning_rate": 1e-4},
    },
    "metrics": {"segment_length": 4096, "overlap_fraction": 0.5, "bandwidth": None},
}

TRAIN_KEYS = {"max_epochs", "patience", "batch_size", "learning_rate", "split", "lr_milestones",
              "lr_gamma"}
STIMULUS = "stimulus.wdpd"
PA_INPUT = "pa_input.wdpd"
PA_OUTPUT = "pa_output.wdpd"
BASELINE_REPORT = "report_baseline.json"
TEACHER_REPORT = "report_teacher.json"
STUDENT_REPORT = "report.json"


# ---------------------------------------------------------------- config


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise InvalidSpecError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key not in ("search_space", "activation"):
            if not isinstance(value, dict):
                raise InvalidSpecError(f"config key {where!r} must be an object")
            if key == "train":
                bad = set(value) - TRAIN_KEYS
                if bad:
                    raise InvalidSpecError(f"unknown training keys under {where!r}: {sorted(bad)}")
                merged = dict(base[key])
                merged.update(value)
                out[key] = merged
            else:
                out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None):
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise InvalidSpecError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise InvalidSpecError(f"config file {path}: {exc}") from None
        if not isinstance(user, dict):
            raise InvalidSpecError("config must be a JSON object")
        cfg = _merge(DEFAULT_CONFIG, user)
    else:
        cfg = copy.deepcopy(cfg)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        seed = int(cfg["master_seed"])
    except (TypeError, ValueError):
        raise InvalidSpecError("master_seed must be an integer") from None
    if not 0 <= seed < 2**64:
        raise InvalidSpecError("master_seed must be a 64-bit unsigned integer")
    waveform_spec(cfg, 0).validate()
    behavioral.WdnnFeatureSpec(cfg["walsh"]["order"], cfg["walsh"]["normalization"])
    iq_features(cfg)
    psd_config(cfg).validate()
    kind = cfg["pa"]["kind"]
    if kind == "coefficients":
        _require_file(cfg["pa"]["coefficients_file"], "pa.coefficients_file")
    elif kind == "replay":
        _require_file(cfg["pa"]["replay_input"], "pa.replay_input")
        _require_file(cfg["pa"]["replay_output"], "pa.replay_output")
    elif kind != "default":
        raise InvalidSpecError(f"unknown pa.kind {kind!r}")
    budgets = cfg["sweep"]["budgets_tflops"]
    if list(budgets) != sorted(budgets):
        raise InvalidSpecError("sweep.budgets_tflops must be sorted ascending")
    for fam in cfg["sweep"]["families"]:
        if fam not in (behavioral.IQ, behavioral.WALSH):
            raise InvalidSpecError(f"unknown model family {fam!r}")
        if fam not in cfg["sweep"]["search_space"]:
            raise InvalidSpecError(f"no search space for family {fam!r}")
    for section in ("teacher", "student", "sweep", "finetune"):
        train_config(cfg, section, 0)
    if int(cfg["student"]["transfer_stimuli"]) < 0:
        raise InvalidSpecError("student.transfer_stimuli must be non-negative")
    for section in ("teacher", "student"):
        if cfg[section]["activation"] not in nn.ACTIVATIONS:
            raise InvalidSpecError(f"{section}.activation must be one of {nn.ACTIVATIONS}")


def _require_file(path, key):
    if not path:
        raise InvalidSpecError(f"{key} is required for this pa.kind")
    if not os.path.isfile(path):
        raise InvalidSpecError(f"{key}: {path} does not exist")


def waveform_spec(cfg, seed):
    w = cfg["waveform"]
    try:
        return signal.WaveformSpec(
            int(w["n_carriers"]), float(w["occupied_fraction"]), int(w["n_samples"]), seed,
            signal.Constellation(w["constellation"]),
        )
    except ValueError as exc:
        raise InvalidSpecError(f"waveform: {exc}") from None


def iq_features(cfg):
    f = cfg["features"]
    return behavioral.R2tdnnFeatureSpec(int(f["memory_depth"]), tuple(f["envelope_orders"]))


def walsh_features(cfg):
    return behavioral.WdnnFeatureSpec(int(cfg["walsh"]["order"]), cfg["walsh"]["normalization"])


def psd_config(cfg):
    m = cfg["metrics"]
    return PsdConfig(int(m["segment_length"]), float(m["overlap_fraction"]))


def train_config(cfg, section, seed):
    t = cfg[section]["train"]
    try:
        return nn.TrainConfig(
            max_epochs=int(t["max_epochs"]),
            patience=int(t["patience"]),
            split=tuple(t.get("split", (0.60, 0.25, 0.15))),
            batch_size=int(t["batch_size"]),
            seed=seed,
            learning_rate=float(t["learning_rate"]),
            lr_milestones=tuple(int(m) for m in t.get("lr_milestones", ())),
            lr_gamma=float(t.get("lr_gamma", 0.3)),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidSpecError(f"{section}.train: {exc}") from None


def seed_for(cfg, stage):
    return nn.derive_seed(cfg["master_seed"], stage)


# ---------------------------------------------------------------- stages


def make_stimulus(cfg, stage="waveform"):
    return signal.generate_multicarrier(waveform_spec(cfg, seed_for(cfg, stage)))


def make_pa(cfg):
    p = cfg["pa"]
    if p["kind"] == "default":
        return pa_model.default_pa()
    if p["kind"] == "coefficients":
        return pa_model.load_pa(p["coefficients_file"])
    sr = 1.0 / float(cfg["waveform"]["occupied_fraction"])
    x = signal.load_any(p["replay_input"], sr)
    y = signal.load_any(p["replay_output"], sr)
    return pa_model.align_pair(x, y, int(p["max_lag"]))


def drive(cfg, x, pa):
    """Scale a stimulus to the configured operating point.

    A replayed amplifier plays back its recorded input, which is used as is.
    """
    if isinstance(pa, pa_model.ReplayPA):
        return pa.input_ref
    return pa_model.nominal_drive(x, pa, float(cfg["pa"]["backoff_db"]))


def transfer_stimuli(cfg, pa):
    """Extra training stimuli at the operating point, one derived seed each.

    A replayed amplifier can only play back its recording, so it gets none.
    """
    if isinstance(pa, pa_model.ReplayPA):
        return []
    n = int(cfg["student"]["transfer_stimuli"])
    return [drive(cfg, make_stimulus(cfg, f"transfer-{i}"), pa) for i in range(n)]


def bandwidth(cfg):
    b = cfg["metrics"]["bandwidth"]
    return float(cfg["waveform"]["occupied_fraction"]) if b is None else float(b)


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Artifacts:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.written = []

    def path(self, name):
        p = os.path.join(self.out_dir, name)
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            if os.path.exists(p):
                os.remove(p)


def _out_dir(cfg, args):
    out = args.out or cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _run(cfg, args, body):
    arts = _Artifacts(_out_dir(cfg, args))
    try:
        return body(arts)
    except BaseException:
        arts.cleanup()
        raise


# ---------------------------------------------------------------- commands


def cmd_generate(cfg, args):
    def body(arts):
        w = make_stimulus(cfg)
        signal.save_waveform(w, arts.path(STIMULUS))
        _dump_json(
            {
                "n_samples": len(w),
                "sample_rate": w.sample_rate,
                "seed": seed_for(cfg, "waveform"),
                "power": w.power,
                "papr_db": signal.papr(w),
            },
            arts.path("generate_summary.json"),
        )
        log.info("stimulus: %d samples, PAPR %.2f dB", len(w), signal.papr(w))

    _run(cfg, args, body)


def _input_waveform(cfg, args):
    if getattr(args, "input", None):
        if not os.path.isfile(args.input):
            raise NotFoundError(f"input waveform {args.input} does not exist")
        return signal.load_any(args.input, 1.0 / float(cfg["waveform"]["occupied_fraction"]))
    return make_stimulus(cfg)


def cmd_amplify(cfg, args):
    def body(arts):
        pa = make_pa(cfg)
        x = drive(cfg, _input_waveform(cfg, args), pa)
        y = pa_model.run_pa(pa, x)
        signal.save_waveform(x, arts.path(PA_INPUT))
        signal.save_waveform(y, arts.path(PA_OUTPUT))
        rep = dpd.evaluate_chain(x, None, pa, bandwidth(cfg), psd_config(cfg), label="no DPD")
        _dump_json(rep.summary(), arts.path("amplify_summary.json"))

    _run(cfg, args, body)


def cmd_sweep_forward(cfg, args):
    def body(arts):
        pa = make_pa(cfg)
        x = drive(cfg, _input_waveform(cfg, args), pa)
        y = pa_model.run_pa(pa, x)
        sw = cfg["sweep"]
        rows = behavioral.complexity_sweep(
            x, y, sw["budgets_tflops"], tuple(sw["families"]),
            {f: [tuple(kn) for kn in sw["search_space"][f]] for f in sw["families"]},
            train_config(cfg, "sweep", seed_for(cfg, "sweep")),
            iq_features(cfg), walsh_features(cfg), jobs=args.jobs,
            activations=sw["activation"], walsh_stride=sw["walsh_stride"],
        )
        behavioral.write_sweep_csv(rows, arts.path("sweep.csv"))
        for r in rows:
            if r.feasible:
                log.info("%s %g TFLOPS: k=%d n=%d test NMSE %.2f dB", r.family, r.budget_tflops,
                         r.spec.hidden_layers, r.spec.hidden_width, r.test_nmse_db)
            else:
                log.info("%s %g TFLOPS: infeasible", r.family, r.budget_tflops)

    _run(cfg, args, body)


def _chain_json(report, extra=None):
    obj = report.summary()
    if extra:
        obj.update(extra)
    return obj


def _net_json(params, f_symb):
    s = params.spec
    return {"k": s.hidden_layers, "n": s.hidden_width, "I": s.input_size, "O": s.output_size,
            "flops": flops(s, f_symb)}


def run_train_dpd(cfg, out_dir, kd=True, finetune=False):
    """Full predistortion pipeline; returns the three chain reports (teacher may be None).

    Training uses the configured stimulus; all reports are measured on an
    independently seeded evaluation stimulus at the same operating point.
    """
    pa = make_pa(cfg)
    replay = isinstance(pa, pa_model.ReplayPA)
    x = drive(cfg, make_stimulus(cfg), pa)
    x_eval = x if replay else drive(cfg, make_stimulus(cfg, "evaluation"), pa)
    transfer = transfer_stimuli(cfg, pa)
    bw, pcfg = bandwidth(cfg), psd_config(cfg)
    wf = walsh_features(cfg)
    st = cfg["student"]
    f_walsh = behavioral.family_f_symb(behavioral.WALSH, wf.walsh_order)
    arts = _Artifacts(out_dir)
    try:
        baseline = dpd.evaluate_chain(x_eval, None, pa, bw, pcfg, label="no DPD")
        teacher_rep = teacher_hist = None
        meta = {"kd": kd, "finetune": finetune, "master_seed": int(cfg["master_seed"])}
        if kd:
            tc = cfg["teacher"]
            teacher, teacher_hist = dpd.train_teacher(
                x, pa, tc["hidden_layers"], tc["hidden_width"],
                train_config(cfg, "teacher", seed_for(cfg, "teacher")), iq_features(cfg),
                tc["activation"],
            )
            dpd.save_predistorter(teacher, arts.path("teacher.json"))
            teacher_rep = dpd.evaluate_chain(x_eval, teacher, pa, bw, pcfg, label="teacher (IQ)")
            _, kd_data = dpd.distill(teacher, x, wf.walsh_order, st["stride"], wf.normalization,
                                     transfer)
            student, student_hist = dpd.pretrain_student(
                kd_data, st["hidden_layers"], st["hidden_width"],
                train_config(cfg, "student", seed_for(cfg, "student")), st["activation"],
            )
            meta["teacher"] = dict(_net_json(teacher.params, behavioral.family_f_symb(behavioral.IQ)),
                                   training=dpd.history_summary(teacher_hist))
        else:
            student, student_hist = dpd.train_student_ila(
                x, pa, st["hidden_layers"], st["hidden_width"],
                train_config(cfg, "student", seed_for(cfg, "student-ila")), wf, st["stride"],
                st["activation"], transfer,
            )
        meta["student"] = dict(_net_json(student.params, f_walsh),
                               training=dpd.history_summary(student_hist))
        if finetune:
            ft = cfg["finetune"]
            student, ft_hist = dpd.finetune_student(
                student, x, pa, train_config(cfg, "finetune", seed_for(cfg, "finetune")),
                epochs=int(ft["epochs"]), stride=st["stride"],
            )
            meta["finetune_training"] = dpd.history_summary(ft_hist)
        dpd.save_predistorter(student, arts.path("student.json"))
        student_rep = dpd.evaluate_chain(x_eval, student, pa, bw, pcfg, label="student (Walsh)")

        _dump_json(_chain_json(baseline, {"master_seed": meta["master_seed"]}),
                   arts.path(BASELINE_REPORT))
        if teacher_rep is not None:
            _dump_json(_chain_json(teacher_rep, {"network": meta["teacher"]}), arts.path(TEACHER_REPORT))
            meta["teacher_student_aclr_gap_db"] = abs(
                teacher_rep.aclr_worst_db - student_rep.aclr_worst_db
            )
        meta["aclr_improvement_db"] = baseline.aclr_worst_db - student_rep.aclr_worst_db
        meta["evm_reduction_percent"] = 100.0 * (
            1 - student_rep.evm_percent / baseline.evm_percent
        )
        _dump_json(_chain_json(student_rep, meta), arts.path(STUDENT_REPORT))
        dpd.write_psd_csv(student_rep.psd_freqs, student_rep.psd_before_db, arts.path("psd_before.csv"))
        dpd.write_psd_csv(student_rep.psd_freqs, student_rep.psd_after_db, arts.path("psd_after.csv"))
        dpd.write_amam_csv(student_rep, arts.path("amam.csv"))
        return baseline, teacher_rep, student_rep
    except BaseException:
        arts.cleanup()
        raise


def cmd_train_dpd(cfg, args):
    base, teach, stud = run_train_dpd(cfg, _out_dir(cfg, args), kd=args.kd, finetune=args.finetune)
    for rep in (base, teach, stud):
        if rep is not None:
            log.info("%-16s EVM %.2f %%  ACLR %.2f dB", rep.label, rep.evm_percent, rep.aclr_worst_db)


def cmd_evaluate(cfg, args):
    def body(arts):
        pa = make_pa(cfg)
        x = drive(cfg, _input_waveform(cfg, args) if args.input else make_stimulus(cfg, "evaluation"), pa)
        pd = None
        if args.predistorter:
            if not os.path.isfile(args.predistorter):
                raise NotFoundError(f"predistorter {args.predistorter} does not exist")
            pd = dpd.load_predistorter(args.predistorter)
        rep = dpd.evaluate_chain(x, pd, pa, bandwidth(cfg), psd_config(cfg),
                                 label="no DPD" if pd is None else os.path.basename(args.predistorter))
        _dump_json(rep.summary(), arts.path("evaluate.json"))
        dpd.write_psd_csv(rep.psd_freqs, rep.psd_after_db, arts.path("evaluate_psd.csv"))
        dpd.write_amam_csv(rep, arts.path("evaluate_amam.csv"))
        print(json.dumps(rep.summary(), indent=2, sort_keys=True))

    _run(cfg, args, body)


def _read_report(directory, name):
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise NotFoundError(f"missing report {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise NotFoundError(f"{path}: {exc}") from None


def report_rows(directory):
    """Rows ``(chain, nmse_db, aclr_worst_db, evm_percent)`` from stored reports."""
    base = _read_report(directory, BASELINE_REPORT)
    student = _read_report(directory, STUDENT_REPORT)
    rows = [("no DPD", base)]
    if student.get("kd", True):
        rows.append(("teacher (IQ)", _read_report(directory, TEACHER_REPORT)))
    rows.append(("student (Walsh)", student))
    return [(name, r["nmse_db"], r["aclr_db"]["worst"], r["evm_percent"]) for name, r in rows]


def format_report(rows):
    lines = [f"{'chain':<16} {'NMSE (dB)':>22} {'ACLR (dB)':>22} {'EVM (%)':>22}"]
    for name, n, a, e in rows:
        lines.append(f"{name:<16} {n!r:>22} {a!r:>22} {e!r:>22}")
    return "\n".join(lines)


def cmd_report(cfg, args):
    print(format_report(report_rows(args.directory)))


def cmd_print_default_config(cfg, args):
    print(json.dumps(DEFAULT_CONFIG, indent=2))


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="walshdpd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--log-file", help="append timestamped progress messages to this file")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config=True, out=True):
        s = sub.add_parser(name, help=help_text)
        if config:
            s.add_argument("--config", help="JSON experiment config (defaults fill gaps)")
        if out:
            s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--jobs", type=int, default=1, help="parallel grid-search candidates")
        s.set_defaults(func=fn)
        return s

    add("generate", cmd_generate, "write the multicarrier stimulus")
    s = add("amplify", cmd_amplify, "drive the stimulus through the amplifier")
    s.add_argument("--input", help="waveform file to amplify instead of the generated stimulus")
    s = add("sweep-forward", cmd_sweep_forward, "forward-model accuracy vs complexity sweep")
    s.add_argument("--input", help="waveform file to use instead of the generated stimulus")
    s = add("train-dpd", cmd_train_dpd, "train teacher/student predistorters and evaluate")
    s.add_argument("--kd", dest="kd", action="store_true", default=True,
                   help="distil the Walsh student from an IQ teacher (default)")
    s.add_argument("--no-kd", dest="kd", action="store_false",
                   help="train the Walsh student by indirect learning only")
    s.add_argument("--finetune", action="store_true", help="indirect-learning fine-tuning after KD")
    s = add("evaluate", cmd_evaluate, "measure a chain with an optional stored predistorter")
    s.add_argument("--predistorter", help="teacher.json or student.json")
    s.add_argument("--input", help="waveform file to evaluate on")
    s = add("report", cmd_report, "print the results table of a train-dpd directory", out=False)
    s.add_argument("directory")
    add("print-default-config", cmd_print_default_config, "print the built-in config", config=False,
        out=False)
    return p


def _setup_logging(args):
    log.handlers.clear()
    log.setLevel(logging.INFO)
    if args.verbose:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(h)
    if args.log_file:
        h = logging.FileHandler(args.log_file)
        h.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
        log.addHandler(h)
    if not log.handlers:
        log.addHandler(logging.NullHandler())


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        if args.jobs < 1:
            raise InvalidSpecError("--jobs must be at least 1")
        cfg = load_config(getattr(args, "config", None)) if args.command != "print-default-config" else None
        args.func(cfg, args)
    except WalshDpdError as exc:
        print(f"walshdpd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"walshdpd: numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"walshdpd: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code if isinstance(exc, PermissionError) else 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
