"""Print the contract template: per-family counts, the applicability matrix and the atom list.

    python scripts/atom_catalog.py [--n-max 4] [--list]
"""
import argparse
from collections import Counter

from rvleak.template import FAMILIES, build_template


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-max", type=int, default=4)
    ap.add_argument("--list", action="store_true", help="also print every atom")
    args = ap.parse_args()

    t = build_template(args.n_max)
    per_family = Counter(a.family for a in t.atoms)
    mnemonics = sorted({a.inst_type for a in t.atoms})
    print(f"{len(t)} atoms over {len(mnemonics)} mnemonics (n_max={args.n_max})")
    print("  " + "  ".join(f"{f}={per_family[f]}" for f in FAMILIES))
    print()
    print(f"{'mnemonic':<8} " + " ".join(f"{f:>3}" for f in FAMILIES))
    for m in mnemonics:
        counts = Counter(a.family for a in t.atoms if a.inst_type == m)
        print(f"{m:<8} " + " ".join(f"{counts[f] or '-':>3}" for f in FAMILIES))
    if args.list:
        print()
        print(t.catalog(), end="")


if __name__ == "__main__":
    main()
