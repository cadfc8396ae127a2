"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Reports microseconds per call for each kernel on inputs the attack loop
actually sees (8-dim victim blocks, 4-agent swarm), plus one full cMBA
perturbation under an l1 budget, where the projection dominates.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cmba import kernels


def kernel_cases(rng):
    x = rng.normal(size=8) * 2
    lo, hi = -rng.uniform(0.1, 1.5, 8), rng.uniform(0.1, 1.5, 8)
    pos, vel = rng.uniform(-5, 5, (4, 2)), rng.uniform(-2, 2, (4, 2))
    goals, act = rng.uniform(-5, 5, (4, 2)), rng.uniform(-1, 1, (4, 2))
    return {
        "clamp": lambda k: k.clamp(x, lo, hi),
        "project_l1_ball": lambda k: k.project_l1_ball(x, 0.5),
        "dykstra_l1_box": lambda k: k.dykstra_l1_box(x, lo, hi, 0.5, 1e-10, 100000),
        "swarm_step": lambda k: k.swarm_step(pos, vel, goals, act, 0.1, 0.1, 10.0, 2.0, 0.01),
    }


def bench_kernels(repeat, number):
    backends = kernels.available_backends()
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<18}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {}
        for name, mod in backends.items():
            t = min(timeit.repeat(lambda: fn(mod), number=number, repeat=repeat))
            times[name] = 1e6 * t / number
        row = f"{label:<18}" + "".join(f"{times[n]:>12.2f}us" for n in backends)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


ATTACK_SNIPPET = """
import time, numpy as np
from cmba import attack, dynlearn, netcore, policy, kernels
from cmba.swarmsim import EnvSpec, SwarmEnv, observation_bounds
spec = EnvSpec()
net = netcore.init_dense((40, 128, 128, 128, 32), seed=0)
model = dynlearn.DynamicsModel(net, 32, 8)
env = SwarmEnv(spec)
s = env.reset(0)
lo, hi = observation_bounds(spec)
c = attack.ConstraintSet(s, lo, hi, (0, 1), attack.Budget(1, 0.5), 4)
pols = [policy.expert()] * 4
target = attack.velocity_failure_target(4)
best = 1e9
for _ in range({repeat}):
    t = time.perf_counter()
    attack.cmba_attack(model, pols, c, target)
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, 1e3 * best)
"""


def bench_attack(repeat):
    """One cMBA call per backend; each runs in a fresh interpreter so the switch takes effect."""
    print("\ncmba_attack, l1 budget, 2 victims, K=30")
    for pure in ("0", "1"):
        env = dict(os.environ, CMBA_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", ATTACK_SNIPPET.format(repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        name, ms = out.stdout.split()
        print(f"  {name:<8} {float(ms):8.2f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=2000)
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}\n")
    bench_kernels(args.repeat, args.number)
    bench_attack(args.repeat)


if __name__ == "__main__":
    main()
