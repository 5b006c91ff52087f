"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the switch is read at import
time. Usage: python benchmarks/bench_kernels.py [--n 2000] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from ssaipw import backend
from ssaipw.basis import BasisSpec, build_ps_basis
from ssaipw.simulation import simulate_dataset
from ssaipw.solver import Loss, PenalizedProblem, minimize_l1
from ssaipw.pipeline import estimate, FitOptions
from ssaipw.simulation import SimConfig

n, repeat = int(sys.argv[1]), int(sys.argv[2])
data = simulate_dataset(1, n, np.random.default_rng(1))
f = build_ps_basis(data, BasisSpec())
r = data.r.astype(float)

def best(fn):
    fn()  # warm-up (includes compilation on the first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

out = {"backend": backend()}
for loss in (Loss.CALIBRATION, Loss.LOGISTIC_ML):
    prob = PenalizedProblem(loss, f, r, lam=0.02)
    out[loss.value] = best(lambda: minimize_l1(prob))
opts = FitOptions()
target = SimConfig(case=1).target
out["estimate_rcal"] = best(lambda: estimate(data, target, "aipw-rcal", opts, 0))
print(json.dumps(out))
"""


def run(no_numba: bool, n: int, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("SSAIPW_NO_NUMBA", None)
    if no_numba:
        env["SSAIPW_NO_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(n), str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = run(False, args.n, args.repeat)
    slow = run(True, args.n, args.repeat)
    print(f"N={args.n}, best of {args.repeat} (seconds)")
    print(f"{'task':<16}{fast['backend']:>10}{slow['backend']:>10}{'speedup':>10}")
    for key in ("calibration", "logistic_ml", "estimate_rcal"):
        print(f"{key:<16}{fast[key]:>10.4f}{slow[key]:>10.4f}{slow[key] / fast[key]:>9.1f}x")


if __name__ == "__main__":
    main()
