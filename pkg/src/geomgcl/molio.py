"""Molecule dataset parsing, conformer averaging, and split generation.

Dataset files are UTF-8 JSON lines, one molecule per line. Lines that
are blank or start with ``#`` are skipped. Keys per record:

    id             string
    atom_features  list of per-atom feature rows (all the same length)
    bonds          list of [u, v] atom-index pairs
    bond_features  list of per-bond feature rows, aligned with bonds
    pos2d          optional list of [x, y] per atom
    conformers     list of conformers, each a list of [x, y, z] per atom
    labels         optional list of numbers, null marking a missing label

When ``pos2d`` is absent it is synthesized from the (x, y) components
of the conformer average and the molecule is flagged. Conformers are
averaged at parse time; downstream geometry uses the average, the raw
conformers stay on the record.
"""

import json
from dataclasses import dataclass, field

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASK_TYPES = (CLASSIFICATION, REGRESSION)


class DatasetError(ValueError):
    """Malformed dataset file or record."""


@dataclass
class Molecule:
    id: str
    atom_features: np.ndarray          # (V, F_a)
    bond_list: list                    # [(u, v), ...] unordered pairs
    bond_features: np.ndarray          # (B, F_b)
    pos2d: np.ndarray                  # (V, 2)
    conformers: list                   # P arrays of shape (V, 3)
    coords3d: np.ndarray               # (V, 3) conformer average
    labels: list | None                # None or [float | None] * task_count
    pos2d_from_3d: bool = False

    @property
    def n_atoms(self):
        return self.atom_features.shape[0]

    @property
    def n_bonds(self):
        return len(self.bond_list)


@dataclass
class Dataset:
    molecules: list = field(default_factory=list)
    task_type: str = REGRESSION
    task_count: int = 0
    feature_dims: tuple = (0, 0)

    def __len__(self):
        return len(self.molecules)


def average_conformers(conformers):
    """Elementwise mean over P same-shape coordinate matrices."""
    if len(conformers) == 0:
        raise DatasetError("no conformers to average")
    stacked = []
    shape = None
    for c in conformers:
        a = np.asarray(c, dtype=np.float64)
        if shape is None:
            shape = a.shape
        elif a.shape != shape:
            raise DatasetError(f"conformer shape mismatch: {a.shape} vs {shape}")
        stacked.append(a)
    return np.mean(np.stack(stacked), axis=0)


def _rect_array(rows, what, mol_id):
    if not isinstance(rows, list):
        raise DatasetError(f"molecule {mol_id}: {what} must be a list of rows")
    try:
        arr = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise DatasetError(f"molecule {mol_id}: ragged or non-numeric {what}") from None
    if arr.ndim != 2:
        raise DatasetError(f"molecule {mol_id}: ragged or non-numeric {what}")
    if not np.isfinite(arr).all():
        raise DatasetError(f"molecule {mol_id}: non-finite value in {what}")
    return arr


def _parse_record(obj, task_type, mol_id):
    atom_features = _rect_array(obj["atom_features"], "atom_features", mol_id)
    n_atoms = atom_features.shape[0]
    if n_atoms == 0:
        raise DatasetError(f"molecule {mol_id}: no atoms")

    bonds_raw = obj.get("bonds", [])
    bond_list = []
    seen = set()
    for b in bonds_raw:
        if not isinstance(b, list) or len(b) != 2:
            raise DatasetError(f"molecule {mol_id}: bond entries must be [u, v] pairs")
        u, v = int(b[0]), int(b[1])
        if u == v:
            raise DatasetError(f"molecule {mol_id}: self-bond on atom {u}")
        if u < 0 or v < 0 or u >= n_atoms or v >= n_atoms:
            raise DatasetError(f"molecule {mol_id}: bond index out of range ({u}, {v})")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DatasetError(f"molecule {mol_id}: duplicate bond ({u}, {v})")
        seen.add(key)
        bond_list.append((u, v))

    bf_raw = obj.get("bond_features", [])
    if len(bf_raw) != len(bond_list):
        raise DatasetError(
            f"molecule {mol_id}: {len(bf_raw)} bond feature rows for {len(bond_list)} bonds"
        )
    if bond_list:
        bond_features = _rect_array(bf_raw, "bond_features", mol_id)
    else:
        bond_features = np.zeros((0, 0))

    conf_raw = obj.get("conformers")
    if not conf_raw:
        raise DatasetError(f"molecule {mol_id}: at least one conformer required")
    conformers = []
    for c in conf_raw:
        a = _rect_array(c, "conformer", mol_id)
        if a.shape != (n_atoms, 3):
            raise DatasetError(
                f"molecule {mol_id}: conformer shape {a.shape}, expected ({n_atoms}, 3)"
            )
        conformers.append(a)
    coords3d = average_conformers(conformers)

    pos2d_raw = obj.get("pos2d")
    if pos2d_raw is None:
        pos2d = coords3d[:, :2].copy()
        pos2d_from_3d = True
    else:
        pos2d = _rect_array(pos2d_raw, "pos2d", mol_id)
        if pos2d.shape != (n_atoms, 2):
            raise DatasetError(
                f"molecule {mol_id}: pos2d shape {pos2d.shape}, expected ({n_atoms}, 2)"
            )
        pos2d_from_3d = False

    labels_raw = obj.get("labels")
    labels = None
    if labels_raw is not None:
        if not isinstance(labels_raw, list) or len(labels_raw) == 0:
            raise DatasetError(f"molecule {mol_id}: labels must be a non-empty list")
        labels = []
        for y in labels_raw:
            if y is None:
                labels.append(None)
                continue
            y = float(y)
            if not np.isfinite(y):
                raise DatasetError(f"molecule {mol_id}: non-finite label")
            if task_type == CLASSIFICATION and y not in (0.0, 1.0):
                raise DatasetError(f"molecule {mol_id}: classification label {y} not in {{0, 1}}")
            labels.append(y)

    return Molecule(
        id=mol_id,
        atom_features=atom_features,
        bond_list=bond_list,
        bond_features=bond_features,
        pos2d=pos2d,
        conformers=conformers,
        coords3d=coords3d,
        labels=labels,
        pos2d_from_3d=pos2d_from_3d,
    )


def parse_dataset(path, task_type):
    """Parse a JSON-lines molecule file into a validated Dataset."""
    if task_type not in TASK_TYPES:
        raise DatasetError(f"unknown task type: {task_type!r}")
    molecules = []
    f_a = f_b = None
    task_count = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj or "atom_features" not in obj:
                raise DatasetError(f"line {lineno}: record must be an object with id and atom_features")
            mol_id = str(obj["id"])
            try:
                mol = _parse_record(obj, task_type, mol_id)
            except DatasetError as e:
                raise DatasetError(f"line {lineno}: {e}") from None

            if f_a is None:
                f_a = mol.atom_features.shape[1]
            elif mol.atom_features.shape[1] != f_a:
                raise DatasetError(
                    f"line {lineno}: molecule {mol_id} has {mol.atom_features.shape[1]} "
                    f"atom features, dataset uses {f_a}"
                )
            if mol.n_bonds > 0:
                if f_b is None:
                    f_b = mol.bond_features.shape[1]
                elif mol.bond_features.shape[1] != f_b:
                    raise DatasetError(
                        f"line {lineno}: molecule {mol_id} has {mol.bond_features.shape[1]} "
                        f"bond features, dataset uses {f_b}"
                    )
            if mol.labels is not None:
                if task_count is None:
                    task_count = len(mol.labels)
                elif len(mol.labels) != task_count:
                    raise DatasetError(
                        f"line {lineno}: molecule {mol_id} has {len(mol.labels)} labels, "
                        f"dataset uses {task_count}"
                    )
            molecules.append(mol)

    if not molecules:
        raise DatasetError("no molecules")
    return Dataset(
        molecules=molecules,
        task_type=task_type,
        task_count=task_count or 0,
        feature_dims=(f_a, f_b or 0),
    )


def _molecule_record(mol):
    rec = {
        "id": mol.id,
        "atom_features": mol.atom_features.tolist(),
        "bonds": [[u, v] for u, v in mol.bond_list],
        "bond_features": mol.bond_features.tolist(),
        "conformers": [c.tolist() for c in mol.conformers],
    }
    if not mol.pos2d_from_3d:
        rec["pos2d"] = mol.pos2d.tolist()
    if mol.labels is not None:
        rec["labels"] = mol.labels
    return rec


def serialize_dataset(dataset, path):
    """Write a Dataset back to JSON lines; parse(serialize(d)) == d."""
    with open(path, "w", encoding="utf-8") as fh:
        for mol in dataset.molecules:
            fh.write(json.dumps(_molecule_record(mol)) + "\n")


def split_dataset(dataset, ratios=(0.8, 0.1, 0.1), seed=0):
    """Deterministic shuffled split into (train, valid, test) index lists.

    Sizes are floor(r0*N), floor(r1*N), and the remainder.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"split ratios must sum to 1, got {ratios}")
    n = len(dataset)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    n_train = int(ratios[0] * n)
    n_valid = int(ratios[1] * n)
    perm = np.random.default_rng(seed).permutation(n)
    train = [int(i) for i in perm[:n_train]]
    valid = [int(i) for i in perm[n_train:n_train + n_valid]]
    test = [int(i) for i in perm[n_train + n_valid:]]
    return train, valid, test


def labels_matrix(dataset, idxs=None):
    """Stack labels into (N, task_count) values plus a presence mask."""
    idxs = range(len(dataset)) if idxs is None else idxs
    c = dataset.task_count
    rows, masks = [], []
    for i in idxs:
        labels = dataset.molecules[i].labels
        row = np.zeros(c)
        mask = np.zeros(c, dtype=bool)
        if labels is not None:
            for j, y in enumerate(labels):
                if y is not None:
                    row[j] = y
                    mask[j] = True
        rows.append(row)
        masks.append(mask)
    return np.array(rows), np.array(masks)
