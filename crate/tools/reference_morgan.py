"""Stand-alone reference for the circular fingerprint used by s2g-core.

Written independently of the Rust code from the algorithm description only;
its output is frozen into fixtures/molecules/fingerprints.txt.

  atom invariant : (atomic number, heavy degree, total bond order, H count, aromatic)
  bond code      : 4 if aromatic else integer order
  iterations     : radius 1..2, neighbour list sorted by (bond code, previous id)
  folding        : every id at radius 0..2 taken modulo 2048
"""

MASK = (1 << 64) - 1
Z = {"H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15, "S": 16,
     "Cl": 17, "As": 33, "Se": 34, "Br": 35}


def mix(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def combine(seed, value):
    seed &= MASK
    return mix(seed ^ ((value + 0x9E3779B97F4A7C15 + ((seed << 6) & MASK) + (seed >> 2)) & MASK))


def fingerprint(atoms, bonds, radius=2, nbits=2048):
    n = len(atoms)
    nbrs = [[] for _ in range(n)]
    for i, j, order, arom in bonds:
        code = 4 if arom else order
        nbrs[i].append((j, code, order, arom))
        nbrs[j].append((i, code, order, arom))
    heavy = [i for i in range(n) if atoms[i] != "H"]
    ids = {}
    for i in heavy:
        deg = sum(1 for j, *_ in nbrs[i] if atoms[j] != "H")
        val = sum(o for _, _, o, _ in nbrs[i])
        hc = sum(1 for j, *_ in nbrs[i] if atoms[j] == "H")
        arom = 1 if any(a for *_, a in nbrs[i]) else 0
        h = 0
        for v in (Z[atoms[i]], deg, val, hc, arom):
            h = combine(h, v)
        ids[i] = h
    bits = set(v % nbits for v in ids.values())
    for r in range(1, radius + 1):
        new = {}
        for i in heavy:
            env = sorted((code, ids[j]) for j, code, _, _ in nbrs[i] if atoms[j] != "H")
            h = combine(0, r)
            h = combine(h, ids[i])
            for code, nid in env:
                h = combine(h, code)
                h = combine(h, nid)
            new[i] = h
        ids = new
        bits.update(v % nbits for v in ids.values())
    return sorted(bits)
