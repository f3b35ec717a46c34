#!/usr/bin/env python3
"""Hierarchy quality report: per-level cardinalities, coarsening ratios, and
operator complexity for structured 2D/3D meshes."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from polymg import assembly as asm
from polymg import mesh as msh
from polymg import multigrid as mg
from polymg import rtree as rt
from polymg import space as spc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 2])
    args = ap.parse_args()

    const = asm.ModelConstants(1e5, 1e-2, 1e-4, 0.4)
    for dim, sub in ((2, (128, 128)), (3, (16, 16, 16))):
        mesh = msh.generate_structured(dim, [0.0] * dim, [1.0] * dim, sub)
        hier = rt.build_hierarchy(mesh, num_levels=args.levels)
        card = hier.cardinalities()
        ratios = hier.coarsening_ratios()
        print(f"{dim}D {'x'.join(map(str, sub))}  order {hier.order}")
        print(f"  cardinalities: {card}")
        print("  ratios:        " + ", ".join(f"{r:.2f}" for r in ratios))
        fld = asm.ConductivityField.isotropic(dim, 0.12)
        for p in args.degrees:
            space = spc.space_from_mesh(mesh, p)
            A0 = asm.assemble_system(asm.assemble_mass(mesh, space),
                                     asm.assemble_stiffness(mesh, space, fld),
                                     const)
            H = mg.build_mg(A0, hier, p, mg.MGOptions(levels=args.levels))
            nnz = [lvl.nnz for lvl in H.levels]
            print(f"  p={p}: nnz per level {nnz}, "
                  f"operator complexity {mg.operator_complexity(H):.4f}")


if __name__ == "__main__":
    main()
