"""Benchmark the compiled kernels against the NumPy fallback.

Times the three hot kernels on a distillation-sized workload and a full
training loop, and checks that both backends agree numerically.

    python benchmarks/bench_kernels.py [--examples 60000] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from clozetag.kernels import available_backends
from clozetag.scoring import CSRFeatures, LinearSoftmaxModel, TrainConfig


def make_workload(n_examples: int, dim: int, feats_per_example: int, labels: int, seed: int):
    rng = np.random.default_rng(seed)
    counts = rng.integers(feats_per_example - 4, feats_per_example + 5, size=n_examples)
    indptr = np.zeros(n_examples + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = rng.integers(0, dim, size=int(indptr[-1])).astype(np.int32)
    weights = rng.normal(scale=0.1, size=(dim, labels))
    intercept = rng.normal(scale=0.1, size=labels)
    dprobs = rng.normal(scale=0.05, size=(n_examples, labels))
    return indptr, indices, weights, intercept, dprobs


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(n_examples: int, repeats: int) -> None:
    dim, feats, labels = 1 << 17, 27, 3
    indptr, indices, weights, intercept, dprobs = make_workload(
        n_examples, dim, feats, labels, seed=7
    )
    backends = available_backends()
    print(f"workload: {n_examples} examples, ~{feats} features each, dim {dim}")
    print(f"backends: {', '.join(backends)}")
    print()
    header = f"{'kernel':<12}" + "".join(f"{name:>12}" for name in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)

    reference: dict[str, np.ndarray] = {}
    rows = {
        "csr_logits": lambda impl: impl.csr_logits(indptr, indices, weights, intercept),
        "csr_grad": lambda impl: impl.csr_grad(indptr, indices, dprobs, dim)[0],
        "csr_step": None,
    }
    for name, call in rows.items():
        times = {}
        for backend_name, impl in backends.items():
            if name == "csr_step":
                w = weights.copy()
                b = intercept.copy()
                times[backend_name] = time_call(
                    lambda: impl.csr_step(indptr, indices, w, b, dprobs, 0.01), repeats
                )
                out = w
            else:
                times[backend_name] = time_call(lambda: call(impl), repeats)
                out = call(impl)
            if name in reference:
                np.testing.assert_allclose(out, reference[name], atol=1e-9)
            else:
                reference[name] = out
        row = f"{name:<12}" + "".join(
            f"{times[b] * 1e3:>10.1f}ms" for b in backends
        )
        if len(times) > 1:
            ts = list(times.values())
            row += f"{ts[0] / ts[1]:>9.1f}x"
        print(row)


def bench_training(n_examples: int, repeats: int) -> None:
    dim, labels = 1 << 17, 3
    indptr, indices, _, _, _ = make_workload(n_examples, dim, 27, labels, seed=11)
    csr = CSRFeatures(indptr=indptr, indices=indices, dim=dim)
    rng = np.random.default_rng(3)
    targets = rng.dirichlet(np.ones(labels), size=n_examples)
    config = TrainConfig(epochs=3, lr=0.5, batch_size=256, seed=1)

    import clozetag.kernels as kernels_module

    print()
    print(f"training loop: {n_examples} examples, 3 epochs, batch 256")
    saved = (kernels_module.csr_logits, kernels_module.csr_grad, kernels_module.csr_step)
    results = {}
    try:
        for backend_name, impl in available_backends().items():
            kernels_module.csr_logits = impl.csr_logits
            kernels_module.csr_grad = impl.csr_grad
            kernels_module.csr_step = impl.csr_step
            model = LinearSoftmaxModel(labels=("B", "I", "O"), dim=dim)
            elapsed = time_call(
                lambda: model.fit(csr, targets, config), max(1, repeats // 2)
            )
            results[backend_name] = elapsed
            print(f"  {backend_name:<8} {elapsed * 1e3:>10.1f}ms")
    finally:
        kernels_module.csr_logits, kernels_module.csr_grad, kernels_module.csr_step = saved
    if len(results) > 1:
        ts = list(results.values())
        print(f"  speedup {ts[0] / ts[1]:.1f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--examples", type=int, default=60_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    bench_kernels(args.examples, args.repeats)
    bench_training(args.examples, args.repeats)


if __name__ == "__main__":
    main()
