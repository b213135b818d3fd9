"""Throughput comparison of the numba and numpy assembly kernels.

Runs each element kernel on the geometry of a refined square mesh and
reports seconds per call and the numba speedup.  The numba backend is
exercised only when numba imports; otherwise the numpy timings are
printed alone.  Backend selection for the package itself is described
in biharm.kernels (environment variable BIHARM_KERNELS).

Usage: python benchmarks/bench_kernels.py [--level 6] [--k 2] [--repeat 5]
"""

import argparse
import time

import numpy as np

import biharm.kernels as kernels
from biharm.meshing import builtin_domain, refine_hierarchy
from biharm.quadrature import triangle_rule
from biharm.solvers import stokes_spaces
from biharm.spaces import basis_ref_grads, basis_values, jacobians


def build_inputs(level, k):
    mesh = refine_hierarchy(builtin_domain("square")[1], level)[-1]
    vspace, pspace = stokes_spaces(mesh, k)
    lam, w = triangle_rule(2 * k)
    _, det, inv_t = jacobians(mesh)
    gref_v = basis_ref_grads(vspace, lam)
    vals_v = basis_values(vspace, lam)
    vals_p = basis_values(pspace, lam)
    rng = np.random.default_rng(0)
    fq = rng.standard_normal((len(det), len(w)))
    coeffs = rng.standard_normal((len(det), gref_v.shape[1]))
    return {
        "stiffness": (det, inv_t, gref_v, w),
        "mass": (det, vals_v, w),
        "divergence": (det, inv_t, gref_v, vals_p, w),
        "load": (det, vals_v, fq, w),
        "grads_at_quad": (det, inv_t, gref_v, coeffs),
    }


def best_of(func, args, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--level", type=int, default=6,
                        help="square refinement level (default 6)")
    parser.add_argument("--k", type=int, default=2, choices=(1, 2, 3),
                        help="velocity degree (default 2)")
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions, best-of (default 5)")
    args = parser.parse_args()

    inputs = build_inputs(args.level, args.k)
    nt = len(inputs["stiffness"][0])
    print(f"square level {args.level}, k={args.k}: {nt} triangles, "
          f"best of {args.repeat}")

    backends = {"numpy": {
        "stiffness": kernels._stiffness_np,
        "mass": kernels._mass_np,
        "divergence": kernels._divergence_np,
        "load": kernels._load_np,
        "grads_at_quad": kernels._grads_at_quad_np,
    }}
    if kernels.USE_NUMBA:
        backends["numba"] = {
            "stiffness": kernels._stiffness_nb,
            "mass": kernels._mass_nb,
            "divergence": kernels._divergence_nb,
            "load": kernels._load_nb,
            "grads_at_quad": kernels._grads_at_quad_nb,
        }
        for name, func in backends["numba"].items():
            func(*inputs[name])  # compile outside the timed region
    else:
        print("numba backend off (not importable or BIHARM_KERNELS=numpy); "
              "timing the numpy backend only")

    header = f"{'kernel':<15}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name in inputs:
        times = [best_of(backends[b][name], inputs[name], args.repeat)
                 for b in backends]
        line = f"{name:<15}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
