"""Build a QM9-like stand-in corpus from the molecule files bundled with RDKit.

QM9 itself cannot be fetched in every environment. This script collects
small neutral C/N/O/F molecules (at most 9 heavy atoms) from RDKit's sample
data, and adds connected heavy-atom fragments of larger molecules, capped with
hydrogens. Output is kekulized SMILES, one per line, deduplicated and shuffled
with a fixed seed. Needs RDKit; the package itself does not.

    python tools/make_qm9_surrogate.py tests/data/qm9_surrogate.smi --count 6000
"""

import argparse
import csv
import os
import random

from rdkit import Chem, RDConfig, RDLogger

RDLogger.DisableLog("rdApp.*")

ALLOWED = {"C", "N", "O", "F"}
# heavy-atom count distribution, roughly QM9-shaped (most molecules have 9)
SIZES = [9] * 12 + [8] * 4 + [7] * 2 + [6, 5, 4, 3]


def sources():
    data = RDConfig.RDDataDir
    contrib = RDConfig.RDContribDir
    with open(os.path.join(data, "NCI", "first_5K.smi")) as fh:
        for line in fh:
            if line.strip():
                yield line.split()[0]
    with open(os.path.join(data, "Pains", "test_data", "wehi_mols.csv")) as fh:
        for row in csv.reader(fh):
            if row:
                yield row[0]
    chembl = os.path.join(contrib, "FreeWilson", "data", "CHEMBL2321810.smi")
    if os.path.exists(chembl):
        with open(chembl) as fh:
            for line in fh:
                if line.strip():
                    yield line.split()[0]


def eligible(atom):
    return atom.GetSymbol() in ALLOWED and atom.GetFormalCharge() == 0 and atom.GetNumRadicalElectrons() == 0


def fragment(mol, atoms):
    em = Chem.RWMol()
    index = {}
    for a in atoms:
        new = Chem.Atom(mol.GetAtomWithIdx(a).GetSymbol())
        index[a] = em.AddAtom(new)
    for b in mol.GetBonds():
        i, j = b.GetBeginAtomIdx(), b.GetEndAtomIdx()
        if i in index and j in index:
            em.AddBond(index[i], index[j], b.GetBondType())
    out = em.GetMol()
    Chem.SanitizeMol(out)
    return out


def grow(mol, rng, size):
    start = rng.randrange(mol.GetNumAtoms())
    if not eligible(mol.GetAtomWithIdx(start)):
        return None
    chosen = [start]
    frontier = set()
    while len(chosen) < size:
        for n in mol.GetAtomWithIdx(chosen[-1]).GetNeighbors():
            if n.GetIdx() not in chosen and eligible(n):
                frontier.add(n.GetIdx())
        frontier -= set(chosen)
        if not frontier:
            break
        chosen.append(rng.choice(sorted(frontier)))
    return chosen


def kekule_smiles(mol):
    mol = Chem.Mol(mol)
    Chem.Kekulize(mol, clearAromaticFlags=True)
    return Chem.MolToSmiles(mol, kekuleSmiles=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    ap.add_argument("--count", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples-per-molecule", type=int, default=4)
    args = ap.parse_args()
    rng = random.Random(args.seed)

    seen = set()
    for smi in sources():
        mol = Chem.MolFromSmiles(smi)
        if mol is None:
            continue
        if mol.GetNumHeavyAtoms() <= 9 and all(eligible(a) for a in mol.GetAtoms()) \
                and len(Chem.GetMolFrags(mol)) == 1:
            seen.add(kekule_smiles(mol))
        Chem.Kekulize(mol, clearAromaticFlags=True)
        for _ in range(args.samples_per_molecule):
            atoms = grow(mol, rng, rng.choice(SIZES))
            if not atoms:
                continue
            try:
                frag = fragment(mol, atoms)
            except Exception:  # sanitization failure
                continue
            seen.add(Chem.MolToSmiles(frag, kekuleSmiles=True))
    out = sorted(seen)
    rng.shuffle(out)
    with open(args.output, "w") as fh:
        fh.write("\n".join(out[: args.count]) + "\n")
    print(f"{len(seen)} unique molecules, wrote {min(len(out), args.count)}")


if __name__ == "__main__":
    main()
