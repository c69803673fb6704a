"""Compare the compiled and pure-Python convolution backends.

    python3 benchmarks/bench_kernels.py [--repeats 20] [--csv out.csv]

Times im2col and col2im alone, a full conv2d forward+backward at the shapes
the toy models use, and one training iteration. Also reports the largest
output difference between backends.
"""
import argparse
import csv
import sys
import time

import numpy as np

from remixgan import kernels
from remixgan.config import ExperimentConfig
from remixgan.tensor import Tensor, backward, conv2d, tsum
from remixgan.trainer import Trainer

# (batch, in_ch, size, out_ch, kernel, stride, padding) from the generator/discriminator
SHAPES = [(16, 1, 16, 8, 4, 2, 1), (16, 8, 8, 16, 4, 2, 1), (16, 16, 8, 16, 3, 1, 1), (16, 8, 16, 1, 3, 1, 1)]


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_backend(name, repeats, rng):
    kernels.use_backend(name)
    rows, outputs = [], []
    for n, c, s, o, k, stride, pad in SHAPES:
        x = rng.standard_normal((n, c, s + 2 * pad, s + 2 * pad))
        w = rng.standard_normal((o, c, k, k))
        cols = kernels._impl.im2col(x, k, k, stride)
        t_im2col = best_of(lambda: kernels._impl.im2col(x, k, k, stride), repeats)
        t_col2im = best_of(lambda: kernels._impl.col2im(cols, n, c, x.shape[2], x.shape[3], k, k, stride), repeats)

        xt, wt = Tensor(x[:, :, pad:-pad, pad:-pad], requires_grad=True), Tensor(w, requires_grad=True)

        def fwd_bwd():
            xt.grad = wt.grad = None
            backward(tsum(conv2d(xt, wt, stride=stride, padding=pad)))

        t_conv = best_of(fwd_bwd, repeats)
        outputs.append(xt.grad.copy())
        rows.append({"backend": name, "case": f"conv {c}->{o} k{k} s{stride} @{s}x{s}",
                     "im2col_us": 1e6 * t_im2col, "col2im_us": 1e6 * t_col2im, "conv_fwd_bwd_us": 1e6 * t_conv})
    cfg = ExperimentConfig(iterations=0, output_dir="/tmp/unused")
    trainer = Trainer(cfg)
    trainer.step()
    t_step = best_of(trainer.step, max(3, repeats // 4))
    rows.append({"backend": name, "case": "training iteration (remix)", "im2col_us": float("nan"),
                 "col2im_us": float("nan"), "conv_fwd_bwd_us": 1e6 * t_step})
    return rows, outputs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args(argv)
    try:
        kernels.use_backend("compiled")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    start = kernels.BACKEND
    comp, comp_out = bench_backend("compiled", args.repeats, np.random.default_rng(0))
    py, py_out = bench_backend("python", args.repeats, np.random.default_rng(0))
    kernels.use_backend(start)

    max_diff = max(float(np.max(np.abs(a - b))) for a, b in zip(comp_out, py_out))
    print(f"{'case':<34}{'compiled us':>14}{'python us':>14}{'speedup':>10}")
    for c, p in zip(comp, py):
        for key in ("im2col_us", "col2im_us", "conv_fwd_bwd_us"):
            if np.isnan(c[key]):
                continue
            label = c["case"] if key == "conv_fwd_bwd_us" else f"  {key[:-3]}"
            print(f"{label:<34}{c[key]:>14.1f}{p[key]:>14.1f}{p[key] / c[key]:>9.2f}x")
    print(f"max |input-grad difference| between backends: {max_diff:.3g}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(comp[0]))
            w.writeheader()
            w.writerows(comp + py)
    return 0


if __name__ == "__main__":
    sys.exit(main())
