"""Time the compiled and numpy kernel implementations on the same inputs.

    python3 benchmarks/bench_kernels.py --n 4 16 --repeat 200
"""

import argparse
import timeit

import numpy as np

from mrrxbar import kernels
from mrrxbar.benchmark import required_q
from mrrxbar.calibration import FeedbackParams, initial_phases, readout_scale
from mrrxbar.crossbar import CrossbarConfig
from mrrxbar.physics import device_for_q, drop_lorentz_params


def cases(config, rng):
    d = config.derived
    n = config.size_N
    h = rng.uniform(0, 2 * np.pi, (n, n))
    he = kernels.effective_phases(h, config.thermal_coupling_kappa)
    raw = rng.uniform(0.05, 0.8, (n, n))
    t0, fin = drop_lorentz_params(config.device_template)
    sc = readout_scale(config)
    target = rng.uniform(0.0, 0.9, (n, n))
    h0 = initial_phases(config, target)
    fp = FeedbackParams()
    loop_args = (h0, target, d.offsets, d.gain_fwd, d.numerator, d.rra, config.spectral_leakage,
                 config.thermal_coupling_kappa, d.directions, sc.zero, sc.span, t0, fin,
                 fp.step_gain, fp.tolerance, fp.max_rounds, np.zeros((fp.max_rounds, n, n)),
                 0.0, fp.boundary_margin, fp.max_branch_switches)
    return {
        "effective_phases": lambda m: m.effective_phases(h, config.thermal_coupling_kappa),
        "leak_sum": lambda m: m.leak_sum(d.offsets, he, d.gain_fwd, d.numerator, d.rra, True),
        "leak_tensor": lambda m: m.leak_tensor(d.offsets, he, d.gain_fwd, d.numerator, d.rra, True),
        "invert_drop": lambda m: m.invert_drop(raw, t0, fin),
        "program_loop": lambda m: m.program_loop(*loop_args),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[4, 8, 16])
    ap.add_argument("--repeat", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    impls = kernels.IMPLEMENTATIONS
    if "cython" not in impls:
        print("compiled extension not built; timing numpy kernels only")
    print(f"{'kernel':<18}{'N':>4}" + "".join(f"{k + ' [us]':>16}" for k in impls) + f"{'speedup':>10}")
    for n in args.n:
        # the default ring only resolves a handful of channels
        q = max(9000.0, 1.05 * required_q(n))
        config = CrossbarConfig(size_N=n, device_template=device_for_q(q))
        fns = cases(config, np.random.default_rng(args.seed))
        for name, fn in fns.items():
            times = {}
            for key, mod in impls.items():
                fn(mod)  # warm caches
                times[key] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e6
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<18}{n:>4}" + "".join(f"{t:>16.1f}" for t in times.values())
                  + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
