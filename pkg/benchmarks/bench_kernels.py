"""Compare the numba and pure-numpy kernel paths.

    python3 benchmarks/bench_kernels.py

Part 1 times the kernels in-process (both paths are importable side by side).
Part 2 runs one skip-gram pretraining and two HDM epochs in fresh interpreters,
with and without QAMATCH_NO_NUMBA=1, so the whole pipeline uses one path.
"""

import os
import subprocess
import sys
import timeit

import numpy as np

from qamatch.numerics import kernels


def _best(fn, number, repeat=5):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_kernels():
    rng = np.random.default_rng(0)
    rows = []
    for B, H in ((32, 32), (32, 128), (32, 256)):
        z, c = rng.normal(size=(B, 4 * H)), rng.normal(size=(B, H))
        _, _, acts, tc = kernels.lstm_gates_forward_numpy(z, c)
        dh, dc = rng.normal(size=c.shape), rng.normal(size=c.shape)
        kernels.lstm_gates_forward_numba(z, c)  # compile
        kernels.lstm_gates_backward_numba(dh, dc, acts, tc, c)
        rows.append((f"lstm fwd B={B} H={H}", _best(lambda: kernels.lstm_gates_forward_numba(z, c), 200),
                     _best(lambda: kernels.lstm_gates_forward_numpy(z, c), 200)))
        rows.append((f"lstm bwd B={B} H={H}", _best(lambda: kernels.lstm_gates_backward_numba(dh, dc, acts, tc, c), 200),
                     _best(lambda: kernels.lstm_gates_backward_numpy(dh, dc, acts, tc, c), 200)))
    V, D, n, k = 5000, 100, 20000, 5
    args = (rng.uniform(-0.1, 0.1, (V, D)), np.zeros((V, D)), rng.integers(2, V, n), rng.integers(2, V, n),
            rng.integers(2, V, (n, k)), np.full(n, 0.025))
    kernels.sgns_sweep_numba(*(a.copy() for a in args))
    rows.append((f"sgns sweep n={n} D={D}", _best(lambda: kernels.sgns_sweep_numba(*args), 1, 3),
                 _best(lambda: kernels.sgns_sweep_numpy(*args), 1, 3)))
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, a, b in rows:
        print(f"{name:28s} {1e3 * a:10.3f} {1e3 * b:10.3f} {b / a:8.1f}x")


PIPELINE = """
import time
from qamatch.synth import SyntheticSpec, generate
from qamatch.embeddings import SkipGramConfig, train_skipgram
from qamatch.model import ModelConfig
from qamatch.training import TrainConfig, _pairs_of, train
from qamatch.numerics import kernels
ds = generate(SyntheticSpec(n_dialogues=100, seed=1))
t = time.perf_counter()
emb = train_skipgram([t.tokens for d in ds for t in d.turns], SkipGramConfig(epochs=2, min_count=1))
t1 = time.perf_counter()
train(ModelConfig(encoder_hidden=32, match_hidden=64), _pairs_of(ds[:80]), ds[80:], TrainConfig(max_epochs=2), emb)
t2 = time.perf_counter()
print(kernels.backend(), round(t1 - t, 2), round(t2 - t1, 2))
"""


def bench_pipeline():
    print(f"\n{'backend':8s} {'skip-gram s':>12s} {'2 HDM epochs s':>15s}")
    for flag in ("0", "1"):
        env = {**os.environ, "QAMATCH_NO_NUMBA": flag}
        out = subprocess.run([sys.executable, "-c", PIPELINE], env=env, capture_output=True, text=True, check=True)
        name, sg, tr = out.stdout.split()
        print(f"{name:8s} {float(sg):12.2f} {float(tr):15.2f}")


if __name__ == "__main__":
    bench_kernels()
    bench_pipeline()
