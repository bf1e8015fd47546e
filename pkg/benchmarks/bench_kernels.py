"""Compare the compiled and pure-Python convolution kernels.

Times im2col, col2im and a full conv2d forward/backward at the default
encoder layer geometries, once per available backend::

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 32]
"""

import argparse
import time

import numpy as np

from ccan import kernels
from ccan import tensor as T
from ccan.autoencoder import NetworkConfig
from ccan.tensor import Parameter, Tensor


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def layer_shapes(batch):
    cfg = NetworkConfig()
    h, w = cfg.input_shape
    c_in = 1
    for c_out, stride in zip(cfg.conv_channels, cfg.conv_strides):
        yield (batch, c_in, h, w), (c_out, c_in, 3, 3), stride
        h = T.conv_output_size(h, 3, stride[0], 1)
        w = T.conv_output_size(w, 3, stride[1], 1)
        c_in = c_out


def run(batch, repeat):
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}   batch {batch}, best of {repeat}")
    header = f"{'layer':<28}{'op':<10}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    totals = {b: 0.0 for b in backends}
    for x_shape, k_shape, stride in layer_shapes(batch):
        x = rng.normal(size=x_shape).astype(np.float32)
        k = rng.normal(size=k_shape).astype(np.float32)
        n, c, h, w = x_shape
        oh = T.conv_output_size(h, 3, stride[0], 1)
        ow = T.conv_output_size(w, 3, stride[1], 1)
        cols = kernels.im2col(x, 3, 3, *stride, 1, 1, oh, ow)
        label = f"{c}x{h}x{w} s{stride[0]}{stride[1]}"

        def conv_fwd_bwd():
            xt = Tensor(x, requires_grad=True)
            kt = Parameter(k, name="k")
            T.conv2d(xt, kt, stride, 1).sum().backward()

        ops = {
            "im2col": lambda be: kernels.im2col(x, 3, 3, *stride, 1, 1, oh, ow, backend=be),
            "col2im": lambda be: kernels.col2im(cols, n, c, h, w, 3, 3, *stride, 1, 1, oh, ow, backend=be),
            "conv f+b": None,
        }
        for op, fn in ops.items():
            row = {}
            for be in backends:
                if fn is None:
                    saved, kernels.BACKEND = kernels.BACKEND, be
                    try:
                        row[be] = best_of(conv_fwd_bwd, repeat)
                    finally:
                        kernels.BACKEND = saved
                else:
                    row[be] = best_of(lambda: fn(be), repeat)
                totals[be] += row[be]
            line = f"{label:<28}{op:<10}" + "".join(f"{row[b] * 1e3:>10.2f}ms" for b in backends)
            if len(backends) > 1:
                line += f"{row['python'] / row['cython']:>9.2f}x"
            print(line)
    print("total  " + "  ".join(f"{b}: {t:.3f}s" for b, t in totals.items()))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=32)
    args = parser.parse_args()
    run(args.batch, args.repeat)


if __name__ == "__main__":
    main()
