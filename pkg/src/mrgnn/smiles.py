"""Parser for a practical SMILES subset.

Supported: organic-subset atoms ``B C N O P S F Cl Br I`` and their aromatic
lowercase forms, bracket atoms with element, hydrogen count and charge,
bonds ``- = # :``, branches, and ring closures including ``%nn``.

Stereochemistry, isotopes, atom classes, wildcards, the quadruple bond and
multi-component inputs raise :class:`UnsupportedFeatureError`, which dataset
loaders treat as "skip this record".  Every other defect raises a subclass
of :class:`SmilesSyntaxError`.  All errors carry the byte offset at fault.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .graph import AtomNode, BondKind, MolecularGraph

__all__ = [
    "SmilesError",
    "SmilesLexError",
    "SmilesSyntaxError",
    "UnbalancedParenthesisError",
    "UnclosedRingError",
    "DanglingBondError",
    "RingBondError",
    "UnsupportedFeatureError",
    "TokenKind",
    "SmilesToken",
    "tokenize",
    "parse",
    "emit",
]


class SmilesError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class SmilesLexError(SmilesError):
    """Character outside the SMILES alphabet."""


class SmilesSyntaxError(SmilesError):
    """Well-lexed input that does not form a molecule."""


class UnbalancedParenthesisError(SmilesSyntaxError):
    pass


class UnclosedRingError(SmilesSyntaxError):
    pass


class DanglingBondError(SmilesSyntaxError):
    """A bond symbol not followed by an atom (or not preceded by one)."""


class RingBondError(SmilesSyntaxError):
    """Ring closure that would make a self-loop, duplicate edge or conflicting bond."""


class UnsupportedFeatureError(SmilesError):
    """Valid SMILES outside the supported subset."""


class TokenKind(enum.Enum):
    ORGANIC_ATOM = "organic_atom"
    BRACKET_ATOM = "bracket_atom"
    BOND = "bond"
    RING_DIGIT = "ring_digit"
    BRANCH_OPEN = "branch_open"
    BRANCH_CLOSE = "branch_close"
    DOT = "dot"


@dataclass(frozen=True)
class SmilesToken:
    kind: TokenKind
    text: str
    offset: int
    symbol: str | None = None
    aromatic: bool = False
    charge: int = 0
    hydrogens: int | None = None
    ring: int | None = None
    bond: BondKind | None = None


_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_BONDS = {"-": BondKind.SINGLE, "=": BondKind.DOUBLE, "#": BondKind.TRIPLE, ":": BondKind.AROMATIC}
_ELEMENTS = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr
    Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb
    Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr""".split()
)
_BRACKET_AROMATIC = ("se", "as", "b", "c", "n", "o", "p", "s")
# normal valences for implicit-hydrogen filling of organic-subset atoms
_VALENCES = {"B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,)}


def tokenize(s: str) -> list[SmilesToken]:
    """Split ``s`` into tokens that exactly tile the input."""
    try:
        s.encode("ascii")
    except UnicodeEncodeError as exc:
        raise SmilesLexError("non-ASCII character", exc.start) from None
    tokens: list[SmilesToken] = []
    pos = 0
    n = len(s)
    while pos < n:
        ch = s[pos]
        if s.startswith(("Cl", "Br"), pos):
            tokens.append(SmilesToken(TokenKind.ORGANIC_ATOM, s[pos : pos + 2], pos, symbol=s[pos : pos + 2]))
            pos += 2
        elif ch in "BCNOPSFI":
            tokens.append(SmilesToken(TokenKind.ORGANIC_ATOM, ch, pos, symbol=ch))
            pos += 1
        elif ch in _AROMATIC_ORGANIC:
            tokens.append(SmilesToken(TokenKind.ORGANIC_ATOM, ch, pos, symbol=ch.upper(), aromatic=True))
            pos += 1
        elif ch == "[":
            end = s.find("]", pos)
            if end < 0:
                raise SmilesLexError("unterminated bracket atom", pos)
            tokens.append(_bracket(s[pos : end + 1], pos))
            pos = end + 1
        elif ch in _BONDS:
            tokens.append(SmilesToken(TokenKind.BOND, ch, pos, bond=_BONDS[ch]))
            pos += 1
        elif ch.isdigit():
            tokens.append(SmilesToken(TokenKind.RING_DIGIT, ch, pos, ring=int(ch)))
            pos += 1
        elif ch == "%":
            digits = s[pos + 1 : pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesLexError("'%' must be followed by two digits", pos)
            tokens.append(SmilesToken(TokenKind.RING_DIGIT, s[pos : pos + 3], pos, ring=int(digits)))
            pos += 3
        elif ch == "(":
            tokens.append(SmilesToken(TokenKind.BRANCH_OPEN, ch, pos))
            pos += 1
        elif ch == ")":
            tokens.append(SmilesToken(TokenKind.BRANCH_CLOSE, ch, pos))
            pos += 1
        elif ch == ".":
            tokens.append(SmilesToken(TokenKind.DOT, ch, pos))
            pos += 1
        elif ch in "/\\":
            raise UnsupportedFeatureError(f"stereo bond marker {ch!r} is not supported", pos)
        elif ch == "$":
            raise UnsupportedFeatureError("quadruple bonds are not supported", pos)
        elif ch == "*":
            raise UnsupportedFeatureError("wildcard atoms are not supported", pos)
        else:
            raise SmilesLexError(f"unexpected character {ch!r}", pos)
    return tokens


def _bracket(text: str, offset: int) -> SmilesToken:
    body = text[1:-1]
    i = 0
    if i < len(body) and body[i].isdigit():
        raise UnsupportedFeatureError("isotope labels are not supported", offset + 1)
    if body.startswith("*"):
        raise UnsupportedFeatureError("wildcard atoms are not supported", offset + 1)

    symbol = aromatic = None
    for cand in _BRACKET_AROMATIC:
        if body.startswith(cand):
            symbol, aromatic = cand[0].upper() + cand[1:], True
            break
    if symbol is None:
        two, one = body[:2], body[:1]
        if len(two) == 2 and two in _ELEMENTS:
            symbol = two
        elif one in _ELEMENTS:
            symbol = one
        else:
            raise SmilesLexError(f"unknown element in {text!r}", offset + 1)
        aromatic = False
    i = len(symbol)

    if i < len(body) and body[i] == "@":
        raise UnsupportedFeatureError("chirality markers are not supported", offset + 1 + i)

    hydrogens = 0
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        hydrogens = int(body[i:j]) if j > i else 1
        i = j

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        if j < len(body) and body[j].isdigit():
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * int(body[j:k])
            i = k
        else:
            while j < len(body) and body[j] == body[i]:
                j += 1
            charge = sign * (j - i)
            i = j

    if i < len(body) and body[i] == ":":
        raise UnsupportedFeatureError("atom classes are not supported", offset + 1 + i)
    if i != len(body):
        raise SmilesLexError(f"malformed bracket atom {text!r}", offset + 1 + i)
    return SmilesToken(
        TokenKind.BRACKET_ATOM, text, offset, symbol=symbol, aromatic=bool(aromatic), charge=charge, hydrogens=hydrogens
    )


@dataclass
class _Atom:
    symbol: str
    aromatic: bool
    charge: int
    hydrogens: int | None  # None: fill from normal valence


def parse(s: str) -> MolecularGraph:
    """Build the heavy-atom graph for ``s``."""
    tokens = tokenize(s)
    atoms: list[_Atom] = []
    bonds: dict[tuple[int, int], BondKind] = {}
    prev: int | None = None
    pending: SmilesToken | None = None
    branches: list[tuple[int, int]] = []  # (atom index, offset of '(')
    rings: dict[int, tuple[int, BondKind | None, int]] = {}

    def default_bond(a: int, b: int) -> BondKind:
        return BondKind.AROMATIC if atoms[a].aromatic and atoms[b].aromatic else BondKind.SINGLE

    for tok in tokens:
        k = tok.kind
        if k in (TokenKind.ORGANIC_ATOM, TokenKind.BRACKET_ATOM):
            atoms.append(_Atom(tok.symbol, tok.aromatic, tok.charge, tok.hydrogens))
            idx = len(atoms) - 1
            if prev is not None:
                bonds[(prev, idx)] = pending.bond if pending else default_bond(prev, idx)
            elif pending is not None:
                raise DanglingBondError("bond has no preceding atom", pending.offset)
            pending = None
            prev = idx
        elif k is TokenKind.BOND:
            if pending is not None:
                raise DanglingBondError("two bond symbols in a row", tok.offset)
            if prev is None:
                raise DanglingBondError("bond has no preceding atom", tok.offset)
            pending = tok
        elif k is TokenKind.RING_DIGIT:
            if prev is None:
                raise SmilesSyntaxError("ring-closure digit before any atom", tok.offset)
            if tok.ring in rings:
                other, open_bond, _ = rings.pop(tok.ring)
                close_bond = pending.bond if pending else None
                if open_bond and close_bond and open_bond is not close_bond:
                    raise RingBondError(f"ring {tok.ring} closed with a different bond than it opened with", tok.offset)
                if other == prev:
                    raise RingBondError(f"ring {tok.ring} would bond an atom to itself", tok.offset)
                key = (min(other, prev), max(other, prev))
                if key in bonds:
                    raise RingBondError(f"ring {tok.ring} duplicates an existing bond", tok.offset)
                bonds[key] = open_bond or close_bond or default_bond(other, prev)
            else:
                rings[tok.ring] = (prev, pending.bond if pending else None, tok.offset)
            pending = None
        elif k is TokenKind.BRANCH_OPEN:
            if prev is None:
                raise SmilesSyntaxError("branch before any atom", tok.offset)
            if pending is not None:
                raise DanglingBondError("bond symbol before '('", pending.offset)
            branches.append((prev, tok.offset))
        elif k is TokenKind.BRANCH_CLOSE:
            if not branches:
                raise UnbalancedParenthesisError("')' without matching '('", tok.offset)
            if pending is not None:
                raise DanglingBondError("bond has no following atom", pending.offset)
            prev = branches.pop()[0]
        else:  # DOT
            if pending is not None:
                raise DanglingBondError("bond has no following atom", pending.offset)
            if branches:
                raise UnbalancedParenthesisError("'.' inside an open branch", tok.offset)
            prev = None

    end = len(s)
    if pending is not None:
        raise DanglingBondError("bond has no following atom", pending.offset)
    if branches:
        raise UnbalancedParenthesisError("unclosed '('", branches[-1][1])
    if rings:
        first = min(off for _, _, off in rings.values())
        raise UnclosedRingError("ring bond opened but never closed", first)
    if not atoms:
        raise SmilesSyntaxError("no atoms", end)

    nodes = [
        AtomNode(a.symbol, a.charge, a.aromatic, a.hydrogens if a.hydrogens is not None else _implicit_h(i, a, bonds))
        for i, a in enumerate(atoms)
    ]
    graph = MolecularGraph.from_bonds(nodes, [(i, j, kind) for (i, j), kind in bonds.items()])
    if not graph.is_connected():
        raise UnsupportedFeatureError("multi-component molecules are not supported", s.find("."))
    return graph


def _implicit_h(idx: int, atom: _Atom, bonds: dict[tuple[int, int], BondKind]) -> int:
    orders = [kind for (i, j), kind in bonds.items() if idx in (i, j)]
    valences = _VALENCES.get(atom.symbol, ())
    if not valences:
        return 0
    if atom.aromatic:
        # one valence unit goes to the delocalised pi system
        used = sum(1 if k is BondKind.AROMATIC else int(k.order) for k in orders) + 1
        return max(0, valences[0] - used)
    used = math.ceil(sum(k.order for k in orders))
    for v in valences:
        if v >= used:
            return v - used
    return 0


_BOND_SYMBOL = {BondKind.SINGLE: "-", BondKind.DOUBLE: "=", BondKind.TRIPLE: "#", BondKind.AROMATIC: ":"}


def emit(graph: MolecularGraph) -> str:
    """Debug serializer: explicit bracket atoms and bond symbols everywhere.

    Output is valid input to :func:`parse` and reproduces the graph up to
    node order.  Not canonical.
    """
    m = graph.num_nodes
    if m == 0:
        raise ValueError("cannot emit an empty graph")
    visited = [False] * m
    tree: set[tuple[int, int]] = set()
    order: list[int] = []

    def dfs(i: int) -> None:
        visited[i] = True
        order.append(i)
        for j in graph.adjacency[i]:
            if not visited[j]:
                tree.add((min(i, j), max(i, j)))
                dfs(j)

    parts: list[str] = []
    for root in range(m):
        if not visited[root]:
            if parts:
                parts.append(".")
            dfs(root)

    ring_edges = [(i, j) for i, j, _ in graph.bonds if (i, j) not in tree]
    ring_num = {edge: n + 1 for n, edge in enumerate(ring_edges)}
    rings_at: dict[int, list[tuple[int, int]]] = {i: [] for i in range(m)}
    for i, j in ring_edges:
        rings_at[i].append((i, j))
        rings_at[j].append((i, j))

    def atom_text(i: int) -> str:
        a = graph.atoms[i]
        sym = a.element.lower() if a.aromatic else a.element
        h = "" if a.hydrogens == 0 else ("H" if a.hydrogens == 1 else f"H{a.hydrogens}")
        c = "" if a.formal_charge == 0 else f"{'+' if a.formal_charge > 0 else '-'}{abs(a.formal_charge)}"
        return f"[{sym}{h}{c}]"

    def ring_text(n: int) -> str:
        return str(n) if n < 10 else f"%{n:02d}"

    opened: set[tuple[int, int]] = set()
    seen = [False] * m

    def write(i: int) -> str:
        seen[i] = True
        out = [atom_text(i)]
        for edge in rings_at[i]:
            if edge in opened:
                out.append(_BOND_SYMBOL[graph.bond_kind(*edge)] + ring_text(ring_num[edge]))
            else:
                opened.add(edge)
                out.append(ring_text(ring_num[edge]))
        children = [j for j in graph.adjacency[i] if (min(i, j), max(i, j)) in tree and not seen[j]]
        for n, j in enumerate(children):
            piece = _BOND_SYMBOL[graph.bond_kind(i, j)] + write(j)
            out.append(piece if n == len(children) - 1 else f"({piece})")
        return "".join(out)

    comps = []
    for root in range(m):
        if not seen[root]:
            comps.append(write(root))
    return ".".join(comps)
