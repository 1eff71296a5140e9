#!/usr/bin/env python3
"""
Example usage of bibeefmm

This file demonstrates the programmatic API: a Born ion solved with the
full BEM and the BIBEE estimates, a direct FMM evaluation, and a binding
energy from three solves.
"""

import numpy as np

from bem import KCAL_PER_INTERNAL, SolveOptions, binding_energy, born_energy, kirkwood_oracle, solve
from fmm import FmmConfig, SourceSet, TargetSet, direct_evaluate, evaluate, relative_l2_error
from molgeom import ChargeSet, MolecularSystem, icosphere, merge_systems


def example_born_ion():
    """Unit charge at the centre of a sphere of radius 2 Å."""
    print("=== Born Ion Example ===")

    mesh = icosphere(radius=2.0, subdivisions=4)
    system = MolecularSystem.from_mesh(mesh, ChargeSet([[0.0, 0.0, 0.0]], [1.0], [2.0]))

    for method in ("bem", "cfa", "p", "lb"):
        result = solve(system, method, SolveOptions(order=8))
        print(f"{method.upper():>4}: {result.dG_kcal_mol:10.4f} kcal/mol")
    print(f"Born: {born_energy(2.0) * KCAL_PER_INTERNAL:10.4f} kcal/mol")


def example_off_center_charge():
    """Charge at half the radius; LB and CFA bracket the analytic energy."""
    print("=== Kirkwood Sphere Example ===")

    mesh = icosphere(radius=1.0, subdivisions=4)
    system = MolecularSystem.from_mesh(mesh, ChargeSet([[0.0, 0.0, 0.5]], [1.0], [0.0]))
    lb = solve(system, "lb").dG_internal
    cfa = solve(system, "cfa").dG_internal
    print(f"LB {lb:.6f} <= Kirkwood {kirkwood_oracle(1.0, 0.5):.6f} <= CFA {cfa:.6f}")


def example_fmm():
    """Potential of 20,000 random charges, checked against direct summation."""
    print("=== FMM Example ===")

    rng = np.random.default_rng(0)
    positions = rng.random((20_000, 3))
    sources = SourceSet(positions, rng.uniform(-1.0, 1.0, len(positions)))
    result = evaluate(sources, TargetSet(positions), FmmConfig(order=10), shared=True)

    sample = TargetSet(positions[:500])
    exact = direct_evaluate(sources, sample, skip_coincident=True)
    print(f"relative L2 error: {relative_l2_error(result.potential[:500], exact.potential):.2e}")
    print("timings:", {k: round(v, 3) for k, v in result.timings.items()})


def example_binding():
    """Two spheres far apart: the binding energy is close to zero."""
    print("=== Binding Example ===")

    protein_mesh = icosphere(1.0, 3)
    ligand_mesh = icosphere(1.0, 3, center=(100.0, 0.0, 0.0))
    protein_charges = ChargeSet([[0.0, 0.0, 0.0]], [1.0], [0.0])
    ligand_charges = ChargeSet([[99.7, 0.0, 0.0], [100.3, 0.0, 0.0]], [0.5, -0.5], [0.0, 0.0])

    protein = MolecularSystem.from_mesh(protein_mesh, protein_charges)
    ligand = MolecularSystem.from_mesh(ligand_mesh, ligand_charges)
    combined = merge_systems([protein, ligand])

    results = [solve(s, "cfa") for s in (combined, protein, ligand)]
    print(f"ddG = {binding_energy(*results):.6f} kcal/mol")


def main():
    """Run examples."""
    print("bibeefmm - Examples")
    print("=" * 50)

    example_born_ion()
    # example_off_center_charge()
    # example_fmm()
    # example_binding()


if __name__ == "__main__":
    main()
