"""Wall-time scaling of the score computation at fixed average degree.

Times a 3-layer scoring pass on random graphs of 10k/20k/40k nodes with
wide feature rows (all sizes memory-bound, so ratios reflect the
algorithm) and prints per-doubling growth.

    python3 scripts/timing_scaling.py
"""

import time

import numpy as np

from graphflow import flow
from graphflow.flow import AggregationSpec, DeltaState, ScoreParams
from graphflow.graphs import build_graph


def fixed_degree_graph(n, avg_deg, seed):
    rng = np.random.default_rng(seed)
    m = n * avg_deg // 2
    u = rng.integers(0, n, size=int(m * 1.3) + 16)
    v = rng.integers(0, n, size=int(m * 1.3) + 16)
    keep = u != v
    return build_graph(n, np.stack([u[keep], v[keep]], axis=1)[:m])


def scoring_pass(g, x, layers=3):
    spec = AggregationSpec()
    state = DeltaState.zeros(g.num_nodes)
    cur = x
    for _ in range(layers):
        m = flow.transform_features(cur, spec)
        state.observe(flow.first_deltas(g, m, spec))
        cur = flow.message_pass(g, cur, spec)
    return flow.ifs_score(state, ScoreParams())


def main():
    rng = np.random.default_rng(0)
    sizes = (10_000, 20_000, 40_000)
    cases = {}
    for n in sizes:
        g = fixed_degree_graph(n, 8, 1)
        x = rng.normal(size=(n, 512))
        scoring_pass(g, x)
        cases[n] = (g, x)
    times = {n: [] for n in sizes}
    for _ in range(3):
        for n in sizes:
            g, x = cases[n]
            start = time.perf_counter()
            scoring_pass(g, x)
            times[n].append(time.perf_counter() - start)
    medians = [sorted(times[n])[1] for n in sizes]
    for n, t in zip(sizes, medians):
        print(f"|V| = {n:6d}: median {t * 1000:7.1f} ms over 3 runs")
    print(f"growth per doubling: {medians[1] / medians[0]:.2f}x, "
          f"{medians[2] / medians[1]:.2f}x")


if __name__ == "__main__":
    main()
