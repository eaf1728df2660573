"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends get identical inputs; outputs are checked for agreement
before anything is timed.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from wavehdnn.kernels import backends


def _csr(rng, rows, cols, density):
    a = sp.random(rows, cols, density=density, format="csr", random_state=rng,
                  data_rvs=lambda n: np.ones(n))
    a.sort_indices()
    return a.indptr.astype(np.int64), a.indices.astype(np.int64), a.data.astype(np.float64)


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    nu, ni, d = 2000, 1500, 64
    indptr, indices, data = _csr(rng, nu, ni, 0.01)
    x_items = rng.standard_normal((ni, d))
    x_users = rng.standard_normal((nu, d))
    scores = rng.standard_normal((256, ni))
    m_indptr, m_indices, _ = _csr(rng, 256, ni, 0.02)
    return {
        "csr_matmul": lambda k: k.csr_matmul(indptr, indices, data, x_items, nu),
        "csr_t_matmul": lambda k: k.csr_t_matmul(indptr, indices, data, x_users, ni),
        "topk_masked": lambda k: k.topk_masked(scores, m_indptr, m_indices, 40),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    found = backends()
    if "cython" not in found:
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name in found) + f"{'speedup':>10}")
    for name, call in cases(rng).items():
        outs = {b: call(k) for b, k in found.items()}
        ref = outs["python"]
        for b, out in outs.items():
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12, err_msg=f"{name}/{b}")
        times = {b: _best_of(lambda k=k: call(k), args.repeat) for b, k in found.items()}
        row = f"{name:<14}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in found)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
