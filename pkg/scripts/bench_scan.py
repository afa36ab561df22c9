"""Time the sequential and parallel selective scans and report their gap.

    python scripts/bench_scan.py [--length 128] [--d-inner 128] [--d-state 16] [--repeats 20]
"""
import argparse
import time

import numpy as np

from mpsum.ssm import selective_scan_parallel, selective_scan_seq


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=128)
    ap.add_argument("--d-inner", type=int, default=128)
    ap.add_argument("--d-state", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    shape = (args.length, args.d_inner, args.d_state)
    a = np.exp(-rng.uniform(0, 1, shape))
    d = rng.standard_normal(shape)
    c = rng.standard_normal((args.length, args.d_state))

    for name, fn in (("sequential", selective_scan_seq), ("parallel", selective_scan_parallel)):
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            fn(a, d, c)
        print(f"{name:<10} {(time.perf_counter() - t0) / args.repeats * 1e3:8.2f} ms/call")
    gap = np.abs(selective_scan_parallel(a, d, c) - selective_scan_seq(a, d, c)).max()
    print(f"max |parallel - sequential| = {gap:.2e}")


if __name__ == "__main__":
    main()
