"""Timing of the numba kernels against the numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time::

    python3 benchmarks/bench_kernels.py [--size 64] [--repeat 5]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, time, sys
import numpy as np
from spadesct import kernels
from spadesct.core import ScanGeometry
from spadesct.radon import RadonOperator

n, repeat = int(sys.argv[1]), int(sys.argv[2])
geo = ScanGeometry(int(1.4 * n), int(1.5 * n) - 1, n)
t0 = time.perf_counter()
op = RadonOperator(geo)
build = time.perf_counter() - t0
rng = np.random.default_rng(0)
f = rng.random((8,) + geo.image_shape)
g = rng.random((8,) + geo.sinogram_shape)
est = np.sort(rng.random((16, n * n)), axis=0)
rho = rng.random((16, n * n)) * 0.1

def best(fn):
    fn()
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)

out = {
    "backend": kernels.BACKEND,
    "build_s": build,
    "project_s": best(lambda: op.project(f)),
    "backproject_s": best(lambda: op.backproject(g)),
    "switch_s": best(lambda: kernels.switch_index(est, rho)),
    "checksum": float(op.project(f).sum() + op.backproject(g).sum() + kernels.switch_index(est, rho).sum()),
}
print(json.dumps(out))
"""


def run(backend: str, size: int, repeat: int) -> dict:
    env = dict(os.environ, SPADESCT_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", CHILD, str(size), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = [run(b, args.size, args.repeat) for b in ("numpy", "numba")]
    print(f"{'backend':<8} {'project':>10} {'backproj':>10} {'switch':>10}   (batch 8, best of {args.repeat}, seconds)")
    for r in rows:
        print(f"{r['backend']:<8} {r['project_s']:10.5f} {r['backproject_s']:10.5f} {r['switch_s']:10.5f}")
    rel = abs(rows[0]["checksum"] - rows[1]["checksum"]) / abs(rows[0]["checksum"])
    print(f"checksum relative difference: {rel:.2e}")


if __name__ == "__main__":
    main()
