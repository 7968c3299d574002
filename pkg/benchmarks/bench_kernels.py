"""Compare the compiled and pure-Python kernel backends.

Times each kernel on the same inputs under both backends (checking that
their outputs agree), then times a full training run in a fresh
interpreter per backend, since the backend is chosen at import.

    python3 benchmarks/bench_kernels.py [--dim 100000] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ecsgd import kernels

RUN_SNIPPET = """
import time
from ecsgd import kernels
from ecsgd.compression import CompressorSpec
from ecsgd.problems import ProblemSpec
from ecsgd.simulator import TrainConfig, run_experiment
cfg = TrainConfig(algorithm="doublesqueeze", worker_compressor=CompressorSpec.from_dict({spec!r}),
                  n_workers=8, iterations={iters}, seed=1,
                  problem=ProblemSpec(kind="quadratic", dim={dim}, noise_sigma=1.0))
t0 = time.perf_counter()
run_experiment(cfg)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_cases(dim):
    rng = np.random.default_rng(0)
    v = rng.standard_normal(dim)
    u = rng.random(dim)
    m = float(np.abs(v).max())
    lo, hi = float(v.min()), float(v.max())
    key = 0x299F31D0A4093822
    return {
        "philox_uniform": lambda k: k.philox_uniform(key, 3, 5, 7, dim),
        "topk_indices": lambda k: k.topk_indices(v, dim // 100),
        "sign_bits": lambda k: k.sign_bits(v),
        "ternary_codes": lambda k: k.ternary_codes(v, m, u),
        "quantize_codes": lambda k: k.quantize_codes(v, lo, (hi - lo) / 15, 16, u),
        "clip_low_bits": lambda k: k.clip_low_bits(v, 40),
    }


def bench_kernels(dim, repeat):
    backends = {name: kernels.load_backend(name) for name in kernels.available_backends()}
    print(f"kernels at d={dim} (best of {repeat}, ms)")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in kernel_cases(dim).items():
        outs = [fn(mod) for mod in backends.values()]
        if not all(np.array_equal(outs[0], o) for o in outs[1:]):
            raise SystemExit(f"backends disagree on {name}")
        times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeat)) * 1e3 for mod in backends.values()]
        line = f"{name:<16}" + "".join(f"{t:12.3f}" for t in times)
        if len(times) > 1:
            line += f"{times[1] / times[0]:12.2f}x"
        print(line)


def bench_runs(dim, iters):
    print(f"\nfull doublesqueeze run, n=8, d={dim}, T={iters} (s)")
    for spec in ({"kind": "one_bit"}, {"kind": "top_k", "k": dim // 100}, {"kind": "random_quantize", "levels": 16}):
        for pure in ("0", "1"):
            env = dict(os.environ, ECSGD_PURE_PYTHON=pure)
            code = RUN_SNIPPET.format(spec=spec, iters=iters, dim=dim)
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            backend, seconds = out.stdout.split()
            print(f"  {spec['kind']:<16}{backend:<8}{float(seconds):8.3f}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iters", type=int, default=20)
    args = ap.parse_args(argv)
    bench_kernels(args.dim, args.repeat)
    bench_runs(args.dim, args.iters)


if __name__ == "__main__":
    main()
