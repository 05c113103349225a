"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Criteria 4 to 8 train full-size models on the default configuration and take
most of an hour on a single core; run them alone with
``pytest tests/test_acceptance.py``.
"""

import json
import os
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from walshdpd import behavioral, cli, metrics, nn, pa_model, walsh

mpmath.mp.dps = 50

POWERS = [2**p for p in range(1, 11)]


# ---------------------------------------------------------------- oracles


def sorted_sylvester(n):
    """Hadamard rows reordered by their sign-change count (sequency)."""
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h[np.argsort([count_sign_changes(r) for r in h], kind="stable")]


def count_sign_changes(row):
    return int(np.sum(row[1:] != row[:-1]))


def finite_difference(params, x, y, eps=1e-6):
    grads = []
    for a in params.arrays():
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = nn.nmse_loss(nn.forward_batch(params, x), y)[0]
            flat[i] = old - eps
            down = nn.nmse_loss(nn.forward_batch(params, x), y)[0]
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def mp_nmse_db(y, yh):
    num = mpmath.fsum(abs(mpmath.mpc(a) - mpmath.mpc(b)) ** 2 for a, b in zip(yh, y))
    den = mpmath.fsum(abs(mpmath.mpc(a)) ** 2 for a in y)
    return 10 * mpmath.log10(num / den)


def mp_evm(x, y):
    xs = [mpmath.mpc(v) for v in x]
    ys = [mpmath.mpc(v) for v in y]
    ref = mpmath.fsum(abs(v) ** 2 for v in xs)
    g = mpmath.fsum(mpmath.conj(a) * b for a, b in zip(xs, ys)) / ref
    return 100 * mpmath.sqrt(mpmath.fsum(abs(b / g - a) ** 2 for a, b in zip(xs, ys)) / ref)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- 1 to 3


def test_criterion_1_transform(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_fast = worst_rt = worst_parseval = 0.0
    signs_ok = True
    for n in POWERS:
        x = rng.normal(size=(8, n)) + 1j * rng.normal(size=(8, n))
        dense = x @ sorted_sylvester(n).T / np.sqrt(n)
        c = walsh.fast_forward(x, n)
        worst_fast = max(worst_fast, np.max(np.abs(c - dense)))
        back = walsh.fast_inverse(c, n)
        worst_rt = max(worst_rt, np.max(np.abs(back - x)) / np.max(np.abs(x)))
        e_in, e_out = np.sum(np.abs(x) ** 2), np.sum(np.abs(c) ** 2)
        worst_parseval = max(worst_parseval, abs(e_out - e_in) / e_in)
        basis = walsh.sequency_basis(n).rows
        # rows of the fast transform, read off by transforming unit impulses
        fast_rows = walsh.fast_forward(np.eye(n), n).T.real
        signs_ok &= all(count_sign_changes(basis[i]) == i for i in range(n))
        signs_ok &= all(count_sign_changes(fast_rows[i]) == i for i in range(n))
    elapsed = time.perf_counter() - t0
    passed = worst_fast <= 1e-12 and worst_rt <= 1e-10 and worst_parseval <= 1e-10 and signs_ok
    passed &= elapsed < 10
    record_criterion(1, passed, f"fast vs dense {worst_fast:.2e}, round trip {worst_rt:.2e}, "
                     f"Parseval {worst_parseval:.2e}, sequency order {'exact' if signs_ok else 'WRONG'}, "
                     f"{elapsed:.1f} s")
    assert passed


def test_criterion_2_gradients(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    residual_count = 0
    for j in range(20):
        residual = j % 2 == 0
        residual_count += residual
        i = int(rng.integers(2, 6))
        o = int(rng.integers(1, i + 1)) if residual else int(rng.integers(1, 4))
        spec = nn.MlpSpec(i, o, int(rng.integers(1, 4)), int(rng.integers(1, 7)),
                          ["tanh", "relu"][j % 4 // 2], residual)
        params = nn.init_mlp(spec, j)
        for b in params.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(6, i))
        y = rng.normal(size=(6, o))
        _, dW, db = nn.backward_mlp(params, x, y)
        got = np.concatenate([g.ravel() for g in dW + db])
        want = np.concatenate([g.ravel() for g in finite_difference(params, x, y)])
        worst = max(worst, np.linalg.norm(got - want) / np.linalg.norm(want))
    elapsed = time.perf_counter() - t0
    passed = worst < 1e-5 and elapsed < 30
    record_criterion(2, passed, f"worst relative gradient error {worst:.2e} over 20 specs "
                     f"({residual_count} residual), {elapsed:.1f} s")
    assert passed


def test_criterion_3_metric_oracles(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_nmse = worst_evm = 0.0
    for _ in range(5):
        y = rng.normal(size=300) + 1j * rng.normal(size=300)
        yh = y + 0.03 * (rng.normal(size=300) + 1j * rng.normal(size=300))
        worst_nmse = max(worst_nmse, abs(metrics.nmse(y, yh) - float(mp_nmse_db(y, yh))))
        g = 3.0 * np.exp(0.7j)
        worst_evm = max(worst_evm, abs(metrics.evm(y, g * yh) - float(mp_evm(y, g * yh))))
    flops_ok = True
    for _ in range(50):
        k, n, i, o = (int(v) for v in rng.integers(1, 300, size=4))
        f = Fraction(int(rng.integers(1, 10**6)), int(rng.integers(1, 1000)))
        exact = (2 * n * (i + k * n + o) + o) * f
        spec = nn.MlpSpec(i, o, k, n, residual=False)
        got = metrics.flops(spec, f)
        flops_ok &= Fraction(got) == exact if exact.denominator == 1 else got == float(exact)
    example = metrics.flops(nn.MlpSpec(2, 2, 1, 10), 20e9)
    elapsed = time.perf_counter() - t0
    passed = worst_nmse <= 1e-9 and worst_evm <= 1e-9 and flops_ok and example == 5.64e12
    passed &= elapsed < 5
    record_criterion(3, passed, f"nmse {worst_nmse:.1e} dB, evm {worst_evm:.1e} %, flops "
                     f"{'exact' if flops_ok else 'MISMATCH'}, example {example:.4g}, {elapsed:.1f} s")
    assert passed


# ---------------------------------------------------------------- 4


def test_criterion_4_forward_tiers(record_criterion):
    """Top tier of the forward sweep, each family using its largest default candidate."""
    cfg = cli.load_config()
    t0 = time.perf_counter()
    pa = cli.make_pa(cfg)
    x = cli.drive(cfg, cli.make_stimulus(cfg), pa)
    assert len(x) == 2**16
    y = pa_model.run_pa(pa, x)
    sw = cfg["sweep"]
    top = sw["budgets_tflops"][-1]
    space = {f: [tuple(sw["search_space"][f][-1])] for f in sw["families"]}
    rows = behavioral.complexity_sweep(
        x, y, [top], tuple(sw["families"]), space,
        cli.train_config(cfg, "sweep", cli.seed_for(cfg, "sweep")),
        cli.iq_features(cfg), cli.walsh_features(cfg),
        activations=sw["activation"], walsh_stride=sw["walsh_stride"],
    )
    elapsed = time.perf_counter() - t0
    nmse = {r.family: r.test_nmse_db for r in rows}
    iq, wa = nmse[behavioral.IQ], nmse[behavioral.WALSH]
    gap = abs(iq - wa)
    passed = iq <= -30 and wa <= -30 and gap <= 2 and elapsed <= 900
    record_criterion(4, passed, f"top tier {top} TFLOPS: IQ {iq:.2f} dB, Walsh {wa:.2f} dB, "
                     f"gap {gap:.2f} dB (limit 2), {elapsed:.0f} s")
    assert passed


# ---------------------------------------------------------------- 5 to 8


@pytest.fixture(scope="module")
def kd_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("kd")
    t0 = time.perf_counter()
    assert cli.main(["generate", "--out", str(out)]) == 0
    assert cli.main(["amplify", "--out", str(out)]) == 0
    assert cli.main(["train-dpd", "--out", str(out)]) == 0
    return out, time.perf_counter() - t0


def test_criterion_5_linearization(kd_run, record_criterion):
    out, elapsed = kd_run
    base = read_json(out / cli.BASELINE_REPORT)
    stud = read_json(out / cli.STUDENT_REPORT)
    gain = base["aclr_db"]["worst"] - stud["aclr_db"]["worst"]
    evm_cut = 1 - stud["evm_percent"] / base["evm_percent"]
    passed = gain >= 1 and evm_cut >= 0.40 and elapsed <= 1200
    record_criterion(5, passed, f"ACLR {base['aclr_db']['worst']:.2f} -> {stud['aclr_db']['worst']:.2f} dB "
                     f"(+{gain:.2f} dB), EVM {base['evm_percent']:.2f} -> {stud['evm_percent']:.2f} % "
                     f"(-{100 * evm_cut:.1f} %), {elapsed:.0f} s")
    assert passed


def test_criterion_6_kd_ablation(kd_run, tmp_path, record_criterion):
    out, _ = kd_run
    t0 = time.perf_counter()
    assert cli.main(["train-dpd", "--no-kd", "--out", str(tmp_path)]) == 0
    elapsed = time.perf_counter() - t0
    with_kd = read_json(out / cli.STUDENT_REPORT)
    no_kd = read_json(tmp_path / cli.STUDENT_REPORT)
    same_net = all(with_kd["student"][key] == no_kd["student"][key] for key in ("k", "n", "I", "O"))
    margin = no_kd["aclr_db"]["worst"] - with_kd["aclr_db"]["worst"]
    passed = same_net and margin >= 1 and elapsed <= 1200
    record_criterion(6, passed, f"ACLR with KD {with_kd['aclr_db']['worst']:.2f} dB, without "
                     f"{no_kd['aclr_db']['worst']:.2f} dB (margin {margin:.2f} dB), {elapsed:.0f} s")
    assert passed


def test_criterion_7_teacher_student_gap(kd_run, record_criterion):
    out, elapsed = kd_run
    teach = read_json(out / cli.TEACHER_REPORT)
    stud = read_json(out / cli.STUDENT_REPORT)
    gap = abs(teach["aclr_db"]["worst"] - stud["aclr_db"]["worst"])
    passed = gap <= 1.5 and elapsed <= 1200
    record_criterion(7, passed, f"teacher {teach['aclr_db']['worst']:.2f} dB, student "
                     f"{stud['aclr_db']['worst']:.2f} dB, gap {gap:.2f} dB (limit 1.5), "
                     f"student {stud['student']['k']}x{stud['student']['n']} "
                     f"({stud['student']['flops'] / 1e12:.0f} TFLOPS)")
    assert passed


def test_student_mimics_teacher(kd_run):
    """Distilled student reproduces the teacher's predistorted blocks (held-out rows)."""
    out, _ = kd_run
    assert read_json(out / cli.STUDENT_REPORT)["student"]["training"]["test_nmse_db"] <= -30


def test_criterion_8_determinism(kd_run, tmp_path, record_criterion):
    out, _ = kd_run
    assert cli.main(["generate", "--out", str(tmp_path)]) == 0
    assert cli.main(["amplify", "--out", str(tmp_path)]) == 0
    assert cli.main(["train-dpd", "--out", str(tmp_path)]) == 0
    names = sorted(n for n in os.listdir(out) if n.endswith((".csv", ".json")))
    differ = [n for n in names if (out / n).read_bytes() != (tmp_path / n).read_bytes()]
    passed = not differ and names == sorted(
        n for n in os.listdir(tmp_path) if n.endswith((".csv", ".json"))
    )
    record_criterion(8, passed, f"{len(names)} CSV/JSON artifacts compared, "
                     f"{'all byte-identical' if not differ else 'differ: ' + ', '.join(differ)}")
    assert passed
