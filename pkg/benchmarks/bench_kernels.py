"""Compare the compiled kernels against the numpy fallback.

Kernel timings use a graph batch shaped like one training fold of the default
configuration (352 patients, 24 planes of 24 nodes).  The epoch timing runs a
short training job once per backend in a subprocess, since the backend is
fixed at import.

    python3 benchmarks/bench_kernels.py [--patients N] [--epochs E] [--no-epoch]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mapignn import intra, magcs, mdfd
from mapignn.kernels import available_backends


def workload(patients, planes=24, C=24, k=5, paf=0.05, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((patients, C))
    S = np.abs(rng.standard_normal((patients, planes, C)))
    act = mdfd.select_activated(S, paf).indices
    batch = intra.make_graph_batch(*magcs.knn_edges(X, act, S, k), patients * planes, C)
    E, n = batch.num_edges, patients * planes * C
    return {
        "batch": batch,
        "logits": rng.standard_normal(E),
        "grad_e": rng.standard_normal(E),
        "z": rng.standard_normal((n, intra.EMBED_DIM)),
        "grad_z": rng.standard_normal((n, intra.EMBED_DIM)),
        "messages": rng.standard_normal((E, intra.EMBED_DIM)),
        "values": X.repeat(planes, axis=0),
    }


def kernel_calls(mod, w):
    b = w["batch"]
    indptr, src = b.indptr, b.src
    alpha = mod.segment_softmax(w["logits"], b.weight, indptr)
    out = mod.elu_forward(w["z"], 1.0)
    return {
        "segment_softmax": lambda: mod.segment_softmax(w["logits"], b.weight, indptr),
        "segment_softmax_backward": lambda: mod.segment_softmax_backward(alpha, w["grad_e"], indptr),
        "spmm": lambda: mod.spmm(indptr, src, alpha, w["z"]),
        "spmm_backward": lambda: mod.spmm_backward(indptr, src, alpha, w["z"], w["grad_z"]),
        "scatter_add_rows": lambda: mod.scatter_add_rows(w["messages"], b.dst, len(w["z"])),
        "elu_forward": lambda: mod.elu_forward(w["z"], 1.0),
        "elu_backward": lambda: mod.elu_backward(out, w["grad_z"], 1.0),
        "knn_positions": lambda: mod.knn_positions(w["values"], 5),
    }


def time_call(fn, repeat=5):
    fn()  # warm-up
    runs = timeit.repeat(fn, number=1, repeat=repeat)
    return min(runs)


EPOCH_SCRIPT = """
import json, time
import numpy as np
from mapignn import dataio, kernels, pipeline
from mapignn.config import TrainConfig
ds = dataio.generate_synthetic()
train = np.arange(352)
pipeline.train_fold(ds, (train, np.arange(352, 440)), TrainConfig(epochs=1))
start = time.perf_counter()
pipeline.train_fold(ds, (train, np.arange(352, 440)), TrainConfig(epochs={epochs}))
print(json.dumps({{"backend": kernels.BACKEND, "seconds": (time.perf_counter() - start) / {epochs}}}))
"""


def epoch_time(pure, epochs):
    env = dict(os.environ)
    env["MAPI_PURE_PYTHON"] = "1" if pure else "0"
    out = subprocess.run(
        [sys.executable, "-c", EPOCH_SCRIPT.format(epochs=epochs)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patients", type=int, default=352)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--no-epoch", action="store_true", help="skip the training comparison")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is available")
    w = workload(args.patients)
    print(f"graph batch: {w['batch'].num_edges} edges, {len(w['z'])} nodes")
    names = list(kernel_calls(backends["python"], w))
    timings = {b: {n: time_call(fn, args.repeat) for n, fn in kernel_calls(mod, w).items()}
               for b, mod in backends.items()}

    cols = list(timings)
    print(f"{'kernel':<26}" + "".join(f"{c + ' ms':>14}" for c in cols) + ("   speedup" if len(cols) > 1 else ""))
    for n in names:
        row = f"{n:<26}" + "".join(f"{1e3 * timings[c][n]:>14.2f}" for c in cols)
        if len(cols) > 1:
            row += f"{timings['python'][n] / timings['cython'][n]:>9.2f}x"
        print(row)

    if not args.no_epoch:
        print(f"\nseconds per training epoch (default configuration, {args.epochs} epochs):")
        results = [epoch_time(True, args.epochs)]
        if "cython" in backends:
            results.append(epoch_time(False, args.epochs))
        for r in results:
            print(f"  {r['backend']:<8} {r['seconds']:.3f}")
        if len(results) == 2:
            print(f"  speedup  {results[0]['seconds'] / results[1]['seconds']:.2f}x")


if __name__ == "__main__":
    main()
