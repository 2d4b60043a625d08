"""Synthetic molecule builders shared across the test modules."""

import json

import numpy as np

from geomgcl.molio import Molecule, average_conformers


def random_molecule(rng, n_atoms=None, f_a=5, f_b=3, n_conformers=3, mol_id="m",
                    extra_bond_prob=0.3, coord_scale=1.5, labels=None):
    """Connected random molecule: spanning-tree bonds plus a few extras."""
    n = int(n_atoms if n_atoms is not None else rng.integers(4, 17))
    atom_features = rng.normal(size=(n, f_a))

    bonds = []
    seen = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        bonds.append((u, v))
        seen.add((u, v))
    for _ in range(int(extra_bond_prob * n)):
        u, v = int(rng.integers(0, n)), int(rng.integers(0, n))
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in seen:
            continue
        seen.add(key)
        bonds.append(key)
    bond_features = rng.normal(size=(len(bonds), f_b))

    pos2d = rng.normal(scale=2.0, size=(n, 2))
    base = rng.normal(scale=coord_scale, size=(n, 3))
    conformers = [base + rng.normal(scale=0.05, size=(n, 3)) for _ in range(n_conformers)]

    return Molecule(
        id=mol_id,
        atom_features=atom_features,
        bond_list=bonds,
        bond_features=bond_features,
        pos2d=pos2d,
        conformers=conformers,
        coords3d=average_conformers(conformers),
        labels=labels,
    )


def safe_random_molecule(rng, cutoff, n_domains, m_domains, **kwargs):
    """Random molecule whose geometry sits away from every decision boundary.

    Rejects geometries with pair distances near the cutoff or a distance-bin
    edge, or neighbor angles near an angle-bin edge, so rigid motions cannot
    flip edge sets or domain indices.
    """
    from geomgcl.geomgraph import build_3d_graph

    for _ in range(200):
        mol = random_molecule(rng, **kwargs)
        dists = np.sqrt(((mol.coords3d[:, None] - mol.coords3d[None, :]) ** 2).sum(-1))
        off = dists[~np.eye(len(dists), dtype=bool)]
        if np.abs(off - cutoff).min() < 1e-3 or off.min() < 1e-2:
            continue
        under = off[off < cutoff]
        bins = under * m_domains / cutoff
        if np.abs(bins - np.round(bins)).min() < 1e-4:
            continue
        g3 = build_3d_graph(mol, cutoff, n_domains, m_domains)
        if g3.n_pairs:
            abins = g3.pair_angle * n_domains / np.pi
            inner = np.abs(abins - np.round(abins))
            # the theta = 0 and theta = pi ends never flip under rigid motion
            boundary = (np.round(abins) > 0) & (np.round(abins) < n_domains)
            if boundary.any() and inner[boundary].min() < 1e-4:
                continue
        return mol
    raise RuntimeError("could not sample a boundary-safe molecule")


def molecule_record(mol):
    rec = {
        "id": mol.id,
        "atom_features": mol.atom_features.tolist(),
        "bonds": [[u, v] for u, v in mol.bond_list],
        "bond_features": mol.bond_features.tolist(),
        "pos2d": mol.pos2d.tolist(),
        "conformers": [c.tolist() for c in mol.conformers],
    }
    if mol.labels is not None:
        rec["labels"] = mol.labels
    return rec


def write_dataset_file(path, molecules):
    with open(path, "w", encoding="utf-8") as fh:
        for mol in molecules:
            fh.write(json.dumps(molecule_record(mol)) + "\n")


def random_dataset_file(path, rng, n_molecules, task="regression", task_count=1, **kwargs):
    """Write a random labeled dataset file; returns the molecule list."""
    mols = []
    for i in range(n_molecules):
        if task == "regression":
            labels = [float(rng.uniform(-1, 1)) for _ in range(task_count)]
        else:
            labels = [float(rng.integers(0, 2)) for _ in range(task_count)]
        mols.append(random_molecule(rng, mol_id=f"mol{i}", labels=labels, **kwargs))
    write_dataset_file(path, mols)
    return mols


def permute_molecule(mol, perm):
    """Relabel atoms by permutation: new index perm[i] hosts old atom i."""
    n = mol.n_atoms
    inv = np.empty(n, dtype=int)
    inv[perm] = np.arange(n)
    # row r of the new arrays is old atom inv[r]
    return Molecule(
        id=mol.id,
        atom_features=mol.atom_features[inv],
        bond_list=[(int(perm[u]), int(perm[v])) for u, v in mol.bond_list],
        bond_features=mol.bond_features.copy(),
        pos2d=mol.pos2d[inv],
        conformers=[c[inv] for c in mol.conformers],
        coords3d=mol.coords3d[inv],
        labels=mol.labels,
    )


def random_rotation(rng):
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rigid_motion_molecule(mol, rotation, translation):
    """Apply one rotation plus translation to every conformer."""
    conformers = [c @ rotation.T + translation for c in mol.conformers]
    return Molecule(
        id=mol.id,
        atom_features=mol.atom_features.copy(),
        bond_list=list(mol.bond_list),
        bond_features=mol.bond_features.copy(),
        pos2d=mol.pos2d.copy(),
        conformers=conformers,
        coords3d=average_conformers(conformers),
        labels=mol.labels,
    )
