"""Time covariance blocks, gradient contractions and one likelihood
evaluation under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py --n 300 --repeat 20
"""
import argparse
import json
import os
import subprocess
import sys

_CHILD = """
import json, sys, timeit
import numpy as np
from kernelforge import _accel, parse, GpModel, Dataset, log_marginal_likelihood
n, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
x = np.sort(rng.uniform(0, 10, n))
A = rng.normal(size=(n, n)); W = A + A.T
theta = {"SE": [0.0, 0.0], "PER": [0.0, 0.0, 0.5], "LIN": [-1.0, -1.0, 5.0], "RQ": [0.0, 0.0, 0.0]}
out = {"backend": _accel.backend()}
for fam, th in theta.items():
    _accel.base_block(fam, th, x, x, True, True)          # compile outside the clock
    _accel.base_contract(fam, th, x, W)
    t = timeit.timeit(lambda: _accel.base_block(fam, th, x, x, False, True), number=repeat)
    out[f"block {fam}"] = t / repeat
    t = timeit.timeit(lambda: _accel.base_contract(fam, th, x, W), number=repeat)
    out[f"contract {fam}"] = t / repeat
data = Dataset(x[:, None], np.sin(x) + 0.1 * rng.normal(size=n))
model = GpModel(parse("SE_1 * PER_1 + LIN_1 + RQ_1"), 0.1)
log_marginal_likelihood(model, data)
t = timeit.timeit(lambda: log_marginal_likelihood(model, data), number=repeat)
out["lml+grad SE*PER+LIN+RQ"] = t / repeat
print(json.dumps(out))
"""


def run(flag, n, repeat):
    env = dict(os.environ, KERNELFORGE_NUMBA=flag)
    p = subprocess.run([sys.executable, "-c", _CHILD, str(n), str(repeat)], env=env,
                       capture_output=True, text=True, check=True)
    return json.loads(p.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300, help="number of inputs")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    fast, slow = run("1", args.n, args.repeat), run("0", args.n, args.repeat)
    print(f"n = {args.n}, {args.repeat} repeats; milliseconds per call")
    print(f"{'operation':28s} {fast['backend']:>10s} {slow['backend']:>10s} {'speedup':>8s}")
    for key in fast:
        if key == "backend":
            continue
        a, b = 1e3 * fast[key], 1e3 * slow[key]
        print(f"{key:28s} {a:10.3f} {b:10.3f} {b / a:8.2f}")


if __name__ == "__main__":
    main()
