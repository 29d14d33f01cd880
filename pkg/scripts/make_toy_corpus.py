"""Generate a valence-valid toy corpus of small organic molecules as JSONL.

Each molecule is a random heavy-atom chain (C/N/O, single bonds) with
hydrogens filling the remaining valences, jittered 3D positions, and a
zero-centered center of mass.

Usage:
    python3 scripts/make_toy_corpus.py --count 20 --seed 0 --out corpus.jsonl
"""

import argparse
import sys

import numpy as np

from mjae.molgraph import ELEMENT_INDEX, make_graph, serialize_molecule

HEAVY_VALENCE = {"C": 4, "N": 3, "O": 2}


def random_molecule(rng, n_heavy):
    symbols = [str(rng.choice(list(HEAVY_VALENCE))) for _ in range(n_heavy)]
    types = [ELEMENT_INDEX[s] for s in symbols]
    pos = [1.5 * np.array([i, 0.0, 0.0]) + 0.3 * rng.standard_normal(3)
           for i in range(n_heavy)]
    edges = [(i, i + 1) for i in range(n_heavy - 1)]
    for i, s in enumerate(symbols):
        used = sum(1 for a, b in edges if i in (a, b))
        for _ in range(HEAVY_VALENCE[s] - used):
            j = len(types)
            types.append(ELEMENT_INDEX["H"])
            pos.append(pos[i] + rng.standard_normal(3))
            edges.append((i, j))
    n = len(types)
    bonds = np.zeros((n, n), dtype=int)
    for a, b in edges:
        bonds[a, b] = bonds[b, a] = 1
    positions = np.stack(pos)
    positions -= positions.mean(axis=0)
    return make_graph(types, [0] * n, bonds, positions)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--min-heavy", type=int, default=2)
    ap.add_argument("--max-heavy", type=int, default=4)
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    with open(args.out, "w") as fh:
        for _ in range(args.count):
            n_heavy = int(rng.integers(args.min_heavy, args.max_heavy + 1))
            fh.write(serialize_molecule(random_molecule(rng, n_heavy)) + "\n")
    print(f"wrote {args.count} molecules to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
