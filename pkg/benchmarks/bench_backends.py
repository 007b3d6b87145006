"""Wall time of the compiled kernel against the NumPy fallback.

    python3 benchmarks/bench_backends.py [--preset case1_resilient] [--t-end 6] [--repeat 3]

Both backends integrate the same scenario; the script reports seconds per
run, microseconds per step, the speedup and the largest state difference.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mgdefense import _backend, preset
from mgdefense.engine import run, with_solver


def best_of(cfg, backend: str, repeat: int):
    best, trace = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        trace = run(cfg, backend)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--preset", default="case1_resilient")
    p.add_argument("--t-end", type=float, default=6.0, help="horizon for both backends (s)")
    p.add_argument("--full-t-end", type=float, default=30.0, help="horizon for the compiled-only run (s)")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    if "compiled" not in _backend.available():
        print("compiled extension not built; nothing to compare")
        return 1
    cfg = with_solver(preset(args.preset), t_end=args.t_end)
    steps = cfg.n_steps
    rows = []
    traces = {}
    for backend in ("python", "compiled"):
        sec, traces[backend] = best_of(cfg, backend, args.repeat)
        rows.append((backend, sec, 1e6 * sec / steps))
    diff = np.max(np.abs(traces["python"].state - traces["compiled"].state) / (1 + np.abs(traces["compiled"].state)))

    print(f"scenario {cfg.name}, dt = {cfg.dt:g} s, {steps} steps, best of {args.repeat}")
    print(f"{'backend':<10}{'seconds':>10}{'us/step':>12}")
    for name, sec, per in rows:
        print(f"{name:<10}{sec:>10.3f}{per:>12.1f}")
    print(f"speedup {rows[0][1] / rows[1][1]:.1f}x, max relative state difference {diff:.2g}")

    full = with_solver(preset(args.preset), t_end=args.full_t_end)
    sec, tr = best_of(full, "compiled", 1)
    print(f"compiled {args.full_t_end:g} s horizon: {sec:.3f} s ({tr.status})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
