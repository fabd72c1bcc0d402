"""Time the compiled and pure-Python kernels on the bundled scenarios.

    python benchmarks/bench_kernels.py [--repeat N]

Reports the median wall time of a residual evaluation, a Jacobian evaluation
and a full long-term run for each available backend, plus the speed-up.
"""
import argparse
import statistics
import time
from importlib import resources

from qsslab.io import load_scenario
from qsslab.kernels import available_backends
from qsslab.sim import simulate_longterm


def _median_time(fn, repeat):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench(scenario, backend, repeat):
    path = resources.files("qsslab") / "data" / f"{scenario}.json"
    sc = load_scenario(str(path), backend=backend)
    model, init = sc.build()
    args = (0.0, init.zc, init.zd, init.x, init.y)
    n_eval = 200
    return {
        "eval_all": _median_time(lambda: [model.eval_all(*args) for _ in range(n_eval)], repeat) / n_eval,
        "eval_jacobian": _median_time(lambda: [model.eval_jacobian(*args) for _ in range(20)], repeat) / 20,
        "simulate_longterm": _median_time(lambda: simulate_longterm(model, init, sc.sim), max(1, repeat // 3)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenarios", default="success,failure")
    opts = ap.parse_args()
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    for scenario in opts.scenarios.split(","):
        res = {b: bench(scenario, b, opts.repeat) for b in backends}
        print(f"\n{scenario}")
        print(f"  {'kernel':<18}" + "".join(f"{b:>14}" for b in backends) + ("     speed-up" if len(backends) > 1 else ""))
        for key in res[backends[0]]:
            row = [res[b][key] for b in backends]
            line = f"  {key:<18}" + "".join(f"{v * 1e3:>11.3f} ms" for v in row)
            if len(row) > 1:
                line += f"{row[1] / row[0]:>12.1f}x"
            print(line)


if __name__ == "__main__":
    main()
