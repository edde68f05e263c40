"""Compare the compiled and pure-Python kernels on workloads shaped like the
real ones: message aggregation over a batch of molecules and betweenness of
single molecules.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are checked to agree before timing.
"""

import argparse
import sys
import timeit
from pathlib import Path

import numpy as np

from seqmolgen import ingest, kernels
from seqmolgen.gnn import GraphBatch

DATA = Path(__file__).resolve().parents[1] / "tests" / "data" / "qm9_surrogate.smi"


def workloads():
    graphs = ingest.read_smiles_file(DATA, ingest.QM9).graphs
    batch = GraphBatch.from_graphs(graphs[:500], 6, 4, "avg")
    x = np.random.default_rng(0).normal(size=(batch.n_nodes, 10))
    agg = (batch.src, batch.dst, batch.coef, x, batch.n_nodes)
    csrs = [g.csr() for g in graphs[:200]]
    return agg, csrs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    agg, csrs = workloads()

    ref = {name: (kernels.aggregate(*agg, impl=b), [kernels.betweenness_csr(*c, impl=b) for c in csrs])
           for name, b in backends.items()}
    if "compiled" in ref:
        a, b = ref["compiled"], ref["python"]
        assert np.allclose(a[0], b[0], atol=1e-12)
        assert all(np.allclose(x, y, atol=1e-12) for x, y in zip(a[1], b[1]))

    print(f"{'kernel':<28}{'backend':<10}{'best ms':>10}")
    times = {}
    for name, b in backends.items():
        t_agg = min(timeit.repeat(lambda: kernels.aggregate(*agg, impl=b), number=20, repeat=args.repeat)) / 20
        t_bc = min(timeit.repeat(lambda: [kernels.betweenness_csr(*c, impl=b) for c in csrs],
                                 number=1, repeat=args.repeat))
        times[name] = (t_agg, t_bc)
        print(f"{'aggregate (500 molecules)':<28}{name:<10}{1e3 * t_agg:>10.3f}")
        print(f"{'betweenness (200 molecules)':<28}{name:<10}{1e3 * t_bc:>10.3f}")
    if len(times) == 2:
        (ca, cb), (pa, pb) = times["compiled"], times["python"]
        print(f"speedup: aggregate {pa / ca:.1f}x, betweenness {pb / cb:.1f}x")


if __name__ == "__main__":
    main()
