"""Time the compiled and numpy rollout kernels on the two-step example.

Usage: python3 benchmarks/bench_kernels.py [episodes]
"""
import sys
import time

import numpy as np

from seplearn import backend
from seplearn.oracle.example import example_instance
from seplearn.sim import RolloutPlan, draw_primitives
from seplearn.solver import PlantResponse, bind_parameters, solve_tracking_lq


def best_of(fn, repeat=5):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(episodes=200_000):
    model, plant, noise, cost = example_instance(-0.5)
    truth = PlantResponse.from_system(plant)
    plan = RolloutPlan.build(plant, model, bind_parameters(solve_tracking_lq(model, cost), truth), noise, truth)
    results = {}
    for name in backend.available():
        k = backend.get(name)
        t_draw, (prims, _) = best_of(lambda: draw_primitives(noise, 0, 0, episodes, kernels=k))
        t_roll, batch = best_of(lambda: plan.run(prims, kernels=k))
        results[name] = batch
        print(f"{name:>9}: draw {t_draw * 1e3:8.2f} ms  rollout {t_roll * 1e3:8.2f} ms  "
              f"({episodes / (t_draw + t_roll) / 1e6:.2f} M episodes/s)")
    if len(results) == 2:
        gap = float(np.max(np.abs(results["compiled"][4] - results["python"][4])))
        print(f"max |u_compiled - u_python| = {gap:.1e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 200_000)
