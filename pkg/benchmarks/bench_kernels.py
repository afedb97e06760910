"""Time the compiled ray-march kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--nx 64] [--ntheta 32] [--ray-step 0.01] [--repeat 3]

Both backends run the same calls on the bundled phantom slice; the script
prints the best wall time of each and checks that the results agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rtdisc import _reference
from rtdisc.cli import bundled_scene
from rtdisc.media import load_scene
from rtdisc.transport import TransportOperator

try:
    from rtdisc import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_time(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--ntheta", type=int, default=32)
    ap.add_argument("--ray-step", type=float, default=0.01)
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if _kernels is None:
        raise SystemExit("compiled extension rtdisc._kernels is not available; build it first")

    scene = load_scene(bundled_scene("phantom_slice.json"))
    op = TransportOperator(scene, args.nx, args.ntheta, args.ray_step)
    tab, grid = op.tables, op.grid.spec
    dirs = op.angular.directions
    rng = np.random.default_rng(0)
    G = rng.random(op.shape)

    R = scene.domain.radius
    r = R * np.sqrt(rng.uniform(0, 1, args.rays)) * 0.999
    a = rng.uniform(0, 2 * np.pi, args.rays)
    t = rng.uniform(0, 2 * np.pi, args.rays)
    x = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    xi = np.stack([np.cos(t), np.sin(t)], axis=1)
    gidx = rng.integers(0, args.ntheta, args.rays)

    cases = {
        "optical_depth": lambda m: m.optical_depth(tab, x, xi)[0],
        "march": lambda m: m.march(tab, G, grid, gidx, x, xi, args.ray_step),
        "sweep": lambda m: m.sweep(tab, G, grid, dirs, op.node_ix, op.node_iy, args.ray_step),
    }
    print(f"phantom slice, nx={args.nx}, ntheta={args.ntheta}, ray_step={args.ray_step}, "
          f"{args.rays} random rays, best of {args.repeat}")
    print(f"{'kernel':<14}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max |diff|':>13}")
    for name, call in cases.items():
        t_py, v_py = best_time(lambda: call(_reference), args.repeat)
        t_c, v_c = best_time(lambda: call(_kernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(v_py) - np.asarray(v_c))))
        print(f"{name:<14}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
