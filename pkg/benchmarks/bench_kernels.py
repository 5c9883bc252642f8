"""Compiled vs pure-python kernel benchmark.

Times the two hot forward kernels on representative shapes (the sampling
path's last-position forward and the scoring path's all-positions forward)
and a full rollout-sampling loop through each backend.

Run:  python benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from opsdlab._kernels import _reference
from opsdlab.policy import init_policy

try:
    from opsdlab._kernels import _core
except ImportError:
    _core = None

BACKENDS = {"pure": _reference}
if _core is not None:
    BACKENDS["compiled"] = _core


def time_fn(fn, *args, repeat: int = 200) -> float:
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def bench_kernel(name: str, lengths=(24, 64, 128)) -> None:
    params = init_policy(seed=0)
    rng = np.random.default_rng(0)
    print(f"\n{name} (mean seconds per call)")
    header = f"{'L':>5} " + " ".join(f"{b:>12}" for b in BACKENDS)
    if len(BACKENDS) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for length in lengths:
        ids = rng.integers(0, params.config.vocab_size, size=length).astype(np.int64)
        times = {
            backend: time_fn(getattr(mod, name), *params.kernel_args(), ids)
            for backend, mod in BACKENDS.items()
        }
        row = f"{length:>5} " + " ".join(f"{times[b] * 1e6:>10.1f}us" for b in BACKENDS)
        if len(times) == 2:
            row += f" {times['pure'] / times['compiled']:>8.1f}x"
        print(row)


def bench_sampling(max_new: int = 48, prompt_len: int = 12, repeat: int = 20) -> None:
    """Autoregressive loop cost: one last-position forward per generated
    token over a growing prefix (the dominant cost of training runs)."""
    params = init_policy(seed=0)
    rng = np.random.default_rng(1)
    prompt = rng.integers(0, 10, size=prompt_len).astype(np.int64)
    print(f"\nautoregressive sampling loop ({max_new} tokens)")
    results = {}
    for backend, mod in BACKENDS.items():
        def run():
            ids = list(prompt)
            for _ in range(max_new):
                logits = mod.logits_last(*params.kernel_args(), np.asarray(ids, dtype=np.int64))
                ids.append(int(np.argmax(logits)))
        run()
        start = time.perf_counter()
        for _ in range(repeat):
            run()
        per_rollout = (time.perf_counter() - start) / repeat
        results[backend] = per_rollout
        print(f"  {backend:>9}: {per_rollout * 1e3:8.2f} ms/rollout "
              f"({max_new / per_rollout:8.0f} tokens/s)")
    if len(results) == 2:
        print(f"  speedup: {results['pure'] / results['compiled']:.1f}x")


if __name__ == "__main__":
    print(f"backends available: {', '.join(BACKENDS)}")
    bench_kernel("logits_last")
    bench_kernel("logits_all")
    bench_sampling()
