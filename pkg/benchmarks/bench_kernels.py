"""Compiled vs numpy-fallback kernel timings.

Run with ``python3 benchmarks/bench_kernels.py``. Also times one training
epoch, which is dominated by BLAS matrix products and so does not depend on
the kernel backend.
"""

import argparse
import timeit

import numpy as np

from walshdpd import kernels, nn, pa_model


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_fwht(backend, rows, n, repeat):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, n)) + 1j * rng.normal(size=(rows, n))

    def run():
        backend.fwht_natural(x.copy())

    return best_of(run, repeat)


def bench_mempoly(backend, n, repeat):
    rng = np.random.default_rng(1)
    x = 0.5 * (rng.normal(size=n) + 1j * rng.normal(size=n))
    coeffs = np.array(pa_model.default_pa().coeffs)
    return best_of(lambda: backend.mempoly(x, coeffs), repeat)


def bench_epoch(rows, repeat):
    rng = np.random.default_rng(2)
    data = nn.Dataset(rng.normal(size=(rows, 128)), rng.normal(size=(rows, 128)))
    spec = data.spec(1, 1024, "relu")
    cfg = nn.TrainConfig(max_epochs=1, patience=0, batch_size=256, split=(0.9, 0.1, 0.0))
    return best_of(lambda: nn.train(spec, data, cfg), repeat)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()

    backends = [("python", kernels.fallback)]
    if kernels.compiled is not None:
        backends.append(("compiled", kernels.compiled))
    else:
        print("compiled extension not built; timing the fallback only")

    cases = [
        ("fwht 1024 x 64", lambda b: bench_fwht(b, 1024, 64, args.repeat)),
        ("fwht 64 x 1024", lambda b: bench_fwht(b, 64, 1024, args.repeat)),
        ("mempoly 65536", lambda b: bench_mempoly(b, 65536, args.repeat)),
    ]
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for label, fn in cases:
        times = [fn(b) for _, b in backends]
        line = f"{label:<18}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>9.1f}x"
        print(line)
    print(f"{'train epoch 8k rows':<18}{bench_epoch(8192, 1) * 1e3:>10.0f}ms  (BLAS-bound, backend independent)")


if __name__ == "__main__":
    main()
