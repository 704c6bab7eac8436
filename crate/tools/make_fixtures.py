#!/usr/bin/env python3
"""Regenerate the committed fixture corpus under fixtures/.

Requires RDKit (not needed to build or test the workspace). Geometries come
from ETKDG embedding followed by MMFF relaxation; reference bond graphs come
from RDKit's sanitized molecule (Kekule orders with aromatic flags kept).
Vibrational mode lists are produced by a crude group-frequency model so that
spectra carry functional-group signal; they are fixtures, not physics.

Usage: python tools/make_fixtures.py [out_dir]
"""

import json
import math
import os
import random
import sys

from rdkit import Chem
from rdkit.Chem import AllChem

import reference_morgan

GROUPS = [
    ("alkane", "[CX4;H3,H2,H1]"),
    ("alkene", "[CX3]=[CX3]"),
    ("alkyne", "[CX2]#[CX2]"),
    ("amine", "[NX3;!$(NC=O)]"),
    ("imine", "[NX2]=[CX3]"),
    ("nitrile", "[NX1]#[CX2]"),
    ("alcohol", "[OX2H;!$(OC=O)]"),
    ("ether", "[OX2H0;!$(OC=O);!$([O]-[O])]"),
    ("haloalkane", "[#6;!$(C(=O)[F])][F]"),
    ("aldehyde", "[#6,H][CX3H1](=O)"),
    ("ketone", "[#6][CX3](=O)[#6]"),
    ("ester", "[CX3](=O)[OX2H0]"),
    ("amide", "[CX3](=O)[NX3]"),
    ("arene", "[$([cX2](:*):*),$([cX3](:*):*)]"),
    ("imidazole", "[#7]:[#6]:[#7]"),
    ("pyrazole", "[#7]:[#7]"),
    ("oxazole", "[#7]:[#6]:[#8]"),
    ("isoxazole", "[#7]:[#8]"),
    ("cyclopropane", "C1CC1"),
    ("epoxide", "C1OC1"),
]

PERCEPTION30 = [
    ("methane", "C"), ("ethane", "CC"), ("propane", "CCC"),
    ("isobutane", "CC(C)C"), ("neopentane", "CC(C)(C)C"),
    ("cyclohexane", "C1CCCCC1"), ("cyclopropane", "C1CC1"),
    ("ethene", "C=C"), ("propene", "C=CC"), ("cyclohexene", "C1=CCCCC1"),
    ("butadiene", "C=CC=C"),
    ("ethyne", "C#C"), ("propyne", "C#CC"), ("but2yne", "CC#CC"),
    ("acetonitrile", "CC#N"), ("propionitrile", "CCC#N"),
    ("acrylonitrile", "C=CC#N"),
    ("benzene", "c1ccccc1"), ("toluene", "Cc1ccccc1"), ("pyridine", "c1ccncc1"),
    ("furan", "c1ccoc1"), ("pyrrole", "c1cc[nH]c1"), ("phenol", "Oc1ccccc1"),
    ("benzonitrile", "N#Cc1ccccc1"),
    ("dimethyl_ether", "COC"), ("tetrahydrofuran", "C1CCOC1"),
    ("anisole", "COc1ccccc1"),
    ("methyl_acetate", "CC(=O)OC"), ("ethyl_formate", "CCOC=O"),
    ("methyl_acrylate", "C=CC(=O)OC"),
]

EXTRA = [
    ("ethanol", "CCO"), ("methanol", "CO"), ("acetaldehyde", "CC=O"),
    ("formaldehyde", "C=O"), ("acetone", "CC(C)=O"), ("acetamide", "CC(N)=O"),
    ("methylamine", "CN"), ("n_methylacetamide", "CNC(C)=O"),
    ("fluoromethane", "CF"), ("acetyl_fluoride", "CC(F)=O"),
    ("methanimine", "CN=C"), ("oxazole", "c1cocn1"), ("isoxazole", "c1cnoc1"),
    ("pyrazole", "c1cn[nH]c1"), ("imidazole", "c1c[nH]cn1"),
    ("oxirane", "C1CO1"), ("dimethyl_peroxide", "COOC"), ("acetic_acid", "CC(=O)O"),
    ("hydrogen_cyanide", "C#N"), ("formamide", "NC=O"), ("water", "O"),
    ("ammonia", "N"), ("trifluoromethane", "FC(F)F"), ("thiophene", "c1ccsc1"),
    ("dimethyl_sulfone", "CS(C)(=O)=O"),
]

TOY10 = [
    ("methane", "C"), ("ethane", "CC"), ("ethene", "C=C"), ("ethyne", "C#C"),
    ("methanol", "CO"), ("formaldehyde", "C=O"), ("acetonitrile", "CC#N"),
    ("fluoromethane", "CF"), ("methylamine", "CN"), ("acetaldehyde", "CC=O"),
]


def embed(smiles, seed=7):
    mol = Chem.AddHs(Chem.MolFromSmiles(smiles))
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    if AllChem.EmbedMolecule(mol, params) != 0:
        raise RuntimeError("embedding failed for " + smiles)
    AllChem.MMFFOptimizeMolecule(mol, maxIters=2000)
    return mol


def bonds_of(mol):
    k = Chem.Mol(mol)
    Chem.Kekulize(k, clearAromaticFlags=False)
    out = []
    for b in k.GetBonds():
        i, j = sorted((b.GetBeginAtomIdx(), b.GetEndAtomIdx()))
        out.append([i, j, int(round(b.GetBondTypeAsDouble())), bool(b.GetIsAromatic())])
    out.sort()
    return out


def xyz_text(mol, name):
    conf = mol.GetConformer()
    lines = [str(mol.GetNumAtoms()), name]
    for a in mol.GetAtoms():
        p = conf.GetAtomPosition(a.GetIdx())
        lines.append("%-2s %12.6f %12.6f %12.6f" % (a.GetSymbol(), p.x, p.y, p.z))
    return "\n".join(lines) + "\n"


def fg_counts(mol):
    counts = []
    for _, smarts in GROUPS:
        q = Chem.MolFromSmarts(smarts)
        counts.append(len(mol.GetSubstructMatches(q, uniquify=True, maxMatches=100000)))
    return counts


def hill_formula(mol):
    counts = {}
    for a in mol.GetAtoms():
        counts[a.GetSymbol()] = counts.get(a.GetSymbol(), 0) + 1
    keys = []
    if "C" in counts:
        keys = ["C"] + (["H"] if "H" in counts else [])
    keys += sorted(k for k in counts if k not in keys)
    return "".join(k + (str(counts[k]) if counts[k] > 1 else "") for k in keys)


# --- crude group-frequency mode model -------------------------------------

def modes_of(mol, rng):
    conf = mol.GetConformer()
    modes = []

    def dist(b):
        p = conf.GetAtomPosition(b.GetBeginAtomIdx())
        q = conf.GetAtomPosition(b.GetEndAtomIdx())
        return (p - q).Length()

    for b in mol.GetBonds():
        a1, a2 = b.GetBeginAtom(), b.GetEndAtom()
        s = sorted((a1.GetSymbol(), a2.GetSymbol()))
        order = b.GetBondTypeAsDouble()
        arom = b.GetIsAromatic()
        d = dist(b)
        shift = (1.1 - d) * 40.0
        if "H" in s:
            heavy = a1 if a1.GetSymbol() != "H" else a2
            sym = heavy.GetSymbol()
            hyb = str(heavy.GetHybridization())
            if sym == "C":
                base = {"SP3": 2930.0, "SP2": 3050.0, "SP": 3320.0}.get(hyb, 2950.0)
                if heavy.GetIsAromatic():
                    base = 3065.0
                if any(n.GetSymbol() == "O" and mol.GetBondBetweenAtoms(heavy.GetIdx(), n.GetIdx()).GetBondTypeAsDouble() == 2.0 for n in heavy.GetNeighbors()):
                    base = 2820.0
                modes.append((base + shift, 18.0))
                modes.append((1450.0 + rng.uniform(-15, 15), 6.0))
            elif sym == "O":
                acid = any(n.GetSymbol() == "C" and any(x.GetSymbol() == "O" and x.GetIdx() != heavy.GetIdx() for x in n.GetNeighbors()) for n in heavy.GetNeighbors())
                modes.append(((3580.0 if acid else 3680.0) + shift, 55.0))
                modes.append((1250.0 + rng.uniform(-20, 20), 20.0))
            elif sym == "N":
                modes.append((3450.0 + shift, 25.0))
                modes.append((1620.0 + rng.uniform(-10, 10), 15.0))
            else:
                modes.append((2400.0 + shift, 10.0))
            continue
        if arom:
            modes.append((1600.0 + rng.uniform(-10, 10), 12.0))
            modes.append((1500.0 + rng.uniform(-10, 10), 10.0))
            if "N" in s or "O" in s:
                modes.append((1380.0 + rng.uniform(-15, 15), 14.0))
            continue
        key = (s[0], s[1], order)
        table = {
            ("C", "C", 1.0): (1000.0, 3.0), ("C", "C", 2.0): (1650.0, 10.0),
            ("C", "C", 3.0): (2150.0, 8.0), ("C", "N", 1.0): (1150.0, 15.0),
            ("C", "N", 2.0): (1665.0, 25.0), ("C", "N", 3.0): (2250.0, 35.0),
            ("C", "O", 1.0): (1100.0, 45.0), ("C", "O", 2.0): (1720.0, 80.0),
            ("C", "F", 1.0): (1150.0, 70.0), ("N", "N", 1.0): (1100.0, 8.0),
            ("N", "O", 1.0): (950.0, 12.0), ("O", "O", 1.0): (880.0, 4.0),
            ("C", "S", 1.0): (700.0, 10.0), ("O", "S", 2.0): (1300.0, 70.0),
        }
        base, inten = table.get(key, (900.0, 5.0))
        if key == ("C", "O", 2.0):
            c = a1 if a1.GetSymbol() == "C" else a2
            nbrs = [n.GetSymbol() for n in c.GetNeighbors()]
            if "N" in nbrs:
                base = 1680.0
            elif nbrs.count("O") >= 2:
                base = 1745.0
            elif "H" in nbrs:
                base = 1732.0
        modes.append((base + shift * 3.0, inten))
    # ring deformations / skeleton modes in the fingerprint region
    heavy = [a for a in mol.GetAtoms() if a.GetSymbol() != "H"]
    for a in heavy:
        env = sum(n.GetAtomicNum() for n in a.GetNeighbors()) * 7 + a.GetAtomicNum() * 13 + a.GetDegree() * 29
        modes.append((450.0 + (env * 37) % 850 + rng.uniform(-5, 5), 4.0 + (env % 7)))
    ri = mol.GetRingInfo()
    for ring in ri.AtomRings():
        if len(ring) == 3:
            modes.append((1030.0 + rng.uniform(-8, 8), 12.0))
            modes.append((3010.0 + rng.uniform(-8, 8), 6.0))
    modes.sort()
    return [[round(x / 0.965, 3), round(y, 3)] for x, y in modes]


def perturb(mol, rng, atom=None, amount=1.2):
    m = Chem.Mol(mol)
    conf = m.GetConformer()
    idx = atom if atom is not None else rng.randrange(m.GetNumAtoms())
    p = conf.GetAtomPosition(idx)
    conf.SetAtomPosition(idx, (p.x + amount, p.y + amount * 0.5, p.z - amount * 0.3))
    return m


def write_set(out_dir, entries, rng, with_modes=True):
    os.makedirs(os.path.join(out_dir, "xyz"), exist_ok=True)
    records = []
    for name, smiles in entries:
        mol = embed(smiles)
        with open(os.path.join(out_dir, "xyz", name + ".xyz"), "w") as f:
            f.write(xyz_text(mol, name))
        rec = {
            "id": name,
            "smiles": Chem.MolToSmiles(Chem.RemoveHs(mol)),
            "formula": hill_formula(mol),
            "reference": {"bonds": bonds_of(mol)},
            "fg_counts": fg_counts(mol),
        }
        if with_modes:
            rec["modes"] = modes_of(mol, rng)
        records.append((name, mol, rec))
    with open(os.path.join(out_dir, "records.jsonl"), "w") as f:
        for _, _, rec in records:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return records


def corpus_candidates():
    subs = ["", "O", "N", "F", "C#N", "C=O", "C(C)=O", "C(=O)OC", "OC(C)=O", "C(N)=O",
            "OC", "C=C", "C#C", "C1CC1", "C1CO1", "NC", "C=N"]
    cores = ["C{a}", "C({a})C{b}", "CC({a})C{b}", "c1cc({a})ccc1{b}", "C1CC1({a}){b}",
             "C(=C{a}){b}", "C{a}C#C{b}", "c1c({a})oc({b})n1", "c1c({a})noc1{b}",
             "c1c({a})[nH]c({b})n1", "c1c({a})n[nH]c1{b}", "O(C{a})C{b}"]
    seen = {}
    for core in cores:
        for a in subs:
            for b in subs:
                smi = core.replace("({a})", "(" + a + ")" if a else "").replace("{a}", a)
                smi = smi.replace("({b})", "(" + b + ")" if b else "").replace("{b}", b)
                mol = Chem.MolFromSmiles(smi)
                if mol is None:
                    continue
                if mol.GetNumHeavyAtoms() > 9 or mol.GetNumHeavyAtoms() < 2:
                    continue
                if any(x.GetFormalCharge() != 0 or x.GetNumRadicalElectrons() for x in mol.GetAtoms()):
                    continue
                can = Chem.MolToSmiles(mol)
                seen.setdefault(can, smi)
    return sorted(seen.keys())


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "fixtures")
    rng = random.Random(20240607)

    with open(os.path.join(out, "functional_groups.tsv"), "w") as f:
        for name, smarts in GROUPS:
            f.write(name + "\t" + smarts + "\n")

    mols = write_set(os.path.join(out, "molecules"), PERCEPTION30 + EXTRA, rng)
    with open(os.path.join(out, "molecules", "perception30.txt"), "w") as f:
        for name, _ in PERCEPTION30:
            f.write(name + "\n")
    with open(os.path.join(out, "molecules", "fingerprints.txt"), "w") as f:
        for name, mol, rec in mols:
            atoms = [a.GetSymbol() for a in mol.GetAtoms()]
            bits = reference_morgan.fingerprint(atoms, rec["reference"]["bonds"])
            f.write(name + ": " + " ".join(str(b) for b in bits) + "\n")

    write_set(os.path.join(out, "toy10"), TOY10, rng)

    # screening fixture: 20 clean molecules, one with a displaced atom
    screen = write_set(os.path.join(out, "screen20"), (PERCEPTION30[:10] + EXTRA[:10]), rng)
    name, mol, _ = screen[13]
    bad = perturb(mol, rng, atom=0, amount=1.4)
    with open(os.path.join(out, "screen20", "xyz", name + ".xyz"), "w") as f:
        f.write(xyz_text(bad, name + " (displaced atom 0)"))
    with open(os.path.join(out, "screen20", "corrupted.txt"), "w") as f:
        f.write(name + "\n")

    cands = corpus_candidates()
    rng2 = random.Random(99)
    rng2.shuffle(cands)
    picked = []
    for smi in cands:
        try:
            embed(smi)
        except RuntimeError:
            continue
        picked.append(("m%03d" % len(picked), smi))
        if len(picked) == 200:
            break
    write_set(os.path.join(out, "corpus200"), picked, rng)
    print("corpus candidates:", len(cands), "picked:", len(picked))


if __name__ == "__main__":
    main()
