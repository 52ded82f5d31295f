"""Heavy-atom molecular graphs and per-atom featurization."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BondKind",
    "AtomNode",
    "MolecularGraph",
    "Violation",
    "validate",
    "FeaturizerConfig",
    "FeaturizerConfigError",
    "featurize",
    "degree_bucket",
    "DEFAULT_ELEMENTS",
]


class BondKind(str, enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"

    @property
    def order(self) -> float:
        return _BOND_ORDER[self]


_BOND_ORDER = {BondKind.SINGLE: 1.0, BondKind.DOUBLE: 2.0, BondKind.TRIPLE: 3.0, BondKind.AROMATIC: 1.5}


@dataclass(frozen=True)
class AtomNode:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    hydrogens: int = 0


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


@dataclass(frozen=True)
class MolecularGraph:
    """Undirected graph of heavy atoms.

    ``adjacency[i]`` lists the neighbours of atom ``i`` in ascending order and
    ``bonds`` holds each edge once as ``(i, j, kind)`` with ``i < j``.  Use
    :meth:`from_bonds` to build a consistent instance; the raw constructor is
    left permissive so :func:`validate` can inspect broken inputs.
    """

    atoms: tuple[AtomNode, ...]
    bonds: tuple[tuple[int, int, BondKind], ...]
    adjacency: tuple[tuple[int, ...], ...]

    @classmethod
    def from_bonds(cls, atoms: Sequence[AtomNode], bonds: Iterable[tuple[int, int, BondKind]]) -> MolecularGraph:
        nbrs: list[set[int]] = [set() for _ in atoms]
        norm = []
        for i, j, kind in bonds:
            a, b = (i, j) if i < j else (j, i)
            norm.append((a, b, BondKind(kind)))
            if 0 <= a < len(atoms) and 0 <= b < len(atoms):
                nbrs[a].add(b)
                nbrs[b].add(a)
        norm.sort(key=lambda e: (e[0], e[1]))
        return cls(tuple(atoms), tuple(norm), tuple(tuple(sorted(s)) for s in nbrs))

    @property
    def num_nodes(self) -> int:
        return len(self.atoms)

    @property
    def num_edges(self) -> int:
        return len(self.bonds)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=np.intp)

    def bond_kind(self, i: int, j: int) -> BondKind | None:
        a, b = (i, j) if i < j else (j, i)
        for x, y, kind in self.bonds:
            if x == a and y == b:
                return kind
        return None

    def adjacency_matrix(self) -> np.ndarray:
        m = self.num_nodes
        A = np.zeros((m, m))
        for i, j, _ in self.bonds:
            A[i, j] = A[j, i] = 1.0
        return A

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in self.adjacency[i]:
                if j not in seen:
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == self.num_nodes

    def permuted(self, perm: Sequence[int]) -> MolecularGraph:
        """Relabel so that old node ``i`` becomes node ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.num_nodes)):
            raise ValueError("perm must be a permutation of range(num_nodes)")
        atoms: list[AtomNode | None] = [None] * self.num_nodes
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = [(perm[i], perm[j], k) for i, j, k in self.bonds]
        return MolecularGraph.from_bonds(atoms, bonds)  # type: ignore[arg-type]

    def to_json(self) -> str:
        doc = {
            "atoms": [
                {"element": a.element, "charge": a.formal_charge, "aromatic": a.aromatic, "h": a.hydrogens}
                for a in self.atoms
            ],
            "bonds": [[i, j, k.value] for i, j, k in self.bonds],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> MolecularGraph:
        doc = json.loads(text)
        atoms = [
            AtomNode(a["element"], int(a.get("charge", 0)), bool(a.get("aromatic", False)), int(a.get("h", 0)))
            for a in doc["atoms"]
        ]
        return cls.from_bonds(atoms, [(int(i), int(j), BondKind(k)) for i, j, k in doc["bonds"]])


def validate(graph: MolecularGraph) -> list[Violation]:
    """Every structural invariant violation found; empty means valid."""
    out: list[Violation] = []
    m = graph.num_nodes
    if m < 1:
        out.append(Violation("empty", "graph has no nodes"))
    if len(graph.adjacency) != m:
        out.append(Violation("adjacency-size", f"{len(graph.adjacency)} adjacency rows for {m} atoms"))
        return out

    seen: set[tuple[int, int]] = set()
    for i, j, kind in graph.bonds:
        if not (0 <= i < m and 0 <= j < m):
            out.append(Violation("index", f"bond ({i},{j}) references a missing atom"))
            continue
        if i == j:
            out.append(Violation("self-loop", f"bond ({i},{j})"))
            continue
        if i > j:
            out.append(Violation("bond-order", f"bond ({i},{j}) not stored with i<j"))
        key = (min(i, j), max(i, j))
        if key in seen:
            out.append(Violation("duplicate-edge", f"bond {key} listed more than once"))
        seen.add(key)
        if not isinstance(kind, BondKind):
            out.append(Violation("bond-kind", f"bond {key} has kind {kind!r}"))

    for i, nbrs in enumerate(graph.adjacency):
        if list(nbrs) != sorted(set(nbrs)):
            out.append(Violation("adjacency-order", f"neighbours of {i} not sorted/unique: {nbrs}"))
        for j in nbrs:
            if j == i:
                out.append(Violation("self-loop", f"node {i} lists itself"))
            elif not 0 <= j < m:
                out.append(Violation("index", f"node {i} lists missing neighbour {j}"))
            elif i not in graph.adjacency[j]:
                out.append(Violation("symmetry", f"{j} in N({i}) but {i} not in N({j})"))
            elif (min(i, j), max(i, j)) not in seen:
                out.append(Violation("bond-missing", f"adjacency {i}-{j} has no bond record"))
    for i, j in seen:
        if 0 <= i < m and 0 <= j < m and (j not in graph.adjacency[i] or i not in graph.adjacency[j]):
            out.append(Violation("symmetry", f"bond ({i},{j}) missing from adjacency"))
    for i, atom in enumerate(graph.atoms):
        if atom.hydrogens < 0:
            out.append(Violation("hydrogens", f"atom {i} has negative hydrogen count"))
    return out


# --- featurization -------------------------------------------------------------

DEFAULT_ELEMENTS = ("C", "N", "O", "S", "F", "Si", "P", "Cl", "Br", "Mg", "Na", "Ca", "Fe", "Al", "I", "B")


class FeaturizerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturizerConfig:
    """Per-atom one-hot layout.

    Row layout, left to right: element (vocabulary + one "other" slot),
    degree 0..max_degree_onehot, formal charge over ``charge_range``,
    aromatic flag, hydrogen count 0..max_hydrogens.  Anything past the
    intrinsic width is zero padding up to ``output_dim``.
    """

    element_vocabulary: tuple[str, ...] = DEFAULT_ELEMENTS
    max_degree_onehot: int = 6
    charge_range: tuple[int, int] = (-2, 2)
    max_hydrogens: int = 4
    output_dim: int = 75

    @property
    def intrinsic_dim(self) -> int:
        lo, hi = self.charge_range
        return (len(self.element_vocabulary) + 1) + (self.max_degree_onehot + 1) + (hi - lo + 1) + 1 + (self.max_hydrogens + 1)

    def offsets(self) -> dict[str, int]:
        lo, hi = self.charge_range
        o_deg = len(self.element_vocabulary) + 1
        o_chg = o_deg + self.max_degree_onehot + 1
        o_aro = o_chg + hi - lo + 1
        return {"element": 0, "degree": o_deg, "charge": o_chg, "aromatic": o_aro, "hydrogens": o_aro + 1}

    def check(self) -> None:
        if self.output_dim < self.intrinsic_dim:
            raise FeaturizerConfigError(
                f"output_dim {self.output_dim} is below the intrinsic feature width {self.intrinsic_dim}"
            )
        if self.charge_range[0] > self.charge_range[1]:
            raise FeaturizerConfigError(f"empty charge range {self.charge_range}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["element_vocabulary"] = list(self.element_vocabulary)
        d["charge_range"] = list(self.charge_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> FeaturizerConfig:
        return cls(
            element_vocabulary=tuple(d["element_vocabulary"]),
            max_degree_onehot=int(d["max_degree_onehot"]),
            charge_range=(int(d["charge_range"][0]), int(d["charge_range"][1])),
            max_hydrogens=int(d["max_hydrogens"]),
            output_dim=int(d["output_dim"]),
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def featurize(graph: MolecularGraph, cfg: FeaturizerConfig = FeaturizerConfig()) -> np.ndarray:
    """One feature row per atom, shape ``(m, cfg.output_dim)``."""
    cfg.check()
    off = cfg.offsets()
    lo, hi = cfg.charge_range
    vocab = {sym: i for i, sym in enumerate(cfg.element_vocabulary)}
    other = len(cfg.element_vocabulary)
    X = np.zeros((graph.num_nodes, cfg.output_dim))
    for i, atom in enumerate(graph.atoms):
        X[i, off["element"] + vocab.get(_canonical_symbol(atom), other)] = 1.0
        X[i, off["degree"] + min(graph.degree(i), cfg.max_degree_onehot)] = 1.0
        X[i, off["charge"] + min(max(atom.formal_charge, lo), hi) - lo] = 1.0
        X[i, off["aromatic"]] = 1.0 if atom.aromatic else 0.0
        X[i, off["hydrogens"] + min(atom.hydrogens, cfg.max_hydrogens)] = 1.0
    return X


def _canonical_symbol(atom: AtomNode) -> str:
    # aromatic atoms are written lowercase in SMILES; vocabulary is capitalised
    s = atom.element
    return s[0].upper() + s[1:]


def degree_bucket(d: int, d_max: int) -> int:
    return min(d, d_max)
