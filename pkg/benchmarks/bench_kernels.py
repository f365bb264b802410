"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--quick]

Each kernel is called once before timing so JIT compilation is excluded.
Outputs are compared too; a mismatch aborts the run.
"""
import argparse
import sys
import timeit

import numpy as np

from xmodal import kernels
from xmodal.numerics import cosine_matrix


def _loss_case(rng, batch, dim):
    z = rng.standard_normal((2 * batch, dim))
    labels = np.concatenate([np.arange(batch), np.arange(batch)])
    labels[1] = labels[0]
    labels[batch + 1] = labels[0]
    return cosine_matrix(z, z), labels


def cases(quick):
    rng = np.random.default_rng(0)
    batches = (32, 128) if quick else (32, 128, 512)
    for b in batches:
        sim, labels = _loss_case(rng, b, 64)
        yield f"contrastive B={b}", "contrastive", (sim, labels, b, False)
        yield f"ntxent B={b}", "ntxent", (sim, b, False, 0.07)
    sizes = ((200, 1000),) if quick else ((200, 1000), (2000, 10000))
    for n_q, n_items in sizes:
        sim = rng.standard_normal((n_q, n_items)).round(2)  # rounding forces ties
        relevant = rng.integers(0, n_items, n_q)
        tie_order = rng.permutation(n_items)
        yield f"relevant_ranks {n_q}x{n_items}", "relevant_ranks", (sim, relevant, tie_order)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--quick", action="store_true", help="small sizes only")
    args = ap.parse_args(argv)

    if "numba" not in kernels.IMPLEMENTATIONS:
        print("numba backend unavailable (XMODAL_NUMBA=0 or numba missing)", file=sys.stderr)
        return 1
    fast, ref = kernels.IMPLEMENTATIONS["numba"], kernels.IMPLEMENTATIONS["numpy"]

    print(f"{'kernel':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, name, call_args in cases(args.quick):
        if not _same(fast[name](*call_args), ref[name](*call_args)):
            print(f"{label}: numba and numpy disagree", file=sys.stderr)
            return 1
        t_np = min(timeit.repeat(lambda: ref[name](*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fast[name](*call_args), number=1, repeat=args.repeat))
        print(f"{label:<28}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
