"""Write the toy SDF corpus used by the replay and CLI tests.

    python tools/make_toy_sdf.py tests/data/toy200.sdf 200
"""

import sys
from pathlib import Path

from seqmolgen import ingest

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"


def main(path, n):
    res = ingest.read_smiles_file(DATA / "qm9_surrogate.smi", ingest.QM9)
    # spread the picks over the whole file rather than taking its head
    step = max(1, len(res.graphs) // n)
    graphs = res.graphs[::step][:n]
    Path(path).write_text(ingest.write_sdf(graphs, ingest.QM9))
    print(f"wrote {len(graphs)} molecules to {path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else DATA / "toy200.sdf", int(sys.argv[2]) if len(sys.argv) > 2 else 200)
