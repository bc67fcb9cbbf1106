"""SMILES tokenizer, one-hot codec, and validity checker.

The alphabet is the organic subset plus ring-bond digits, two-digit ring
labels, bond symbols, branch parentheses, and bracket-atom annotations.
Validity is a local, self-contained definition: lexability, balanced
parentheses, paired ring bonds, no dangling bonds, and a per-atom valence
check against a fixed table.  Agreement with a full chemistry toolkit is
a non-goal; the rules below are the reference semantics for this package.

Aromatic handling is deliberately conservative.  An aromatic bond counts
1.5 toward each endpoint, every aromatic atom must carry at least two
aromatic bonds (its ring pair), and the final bond-order sum of an
aromatic atom is floored before the valence comparison (the shared pi
pair rounds down).  Benzene, pyridine, toluene, and fused carbocycles
pass; heteroaromatics that donate a lone pair to the ring (furan,
pyrrole, thiophene) are rejected with ``VALENCE_VIOLATION``.

Bracket atoms carry explicit hydrogen counts, which are added to the
bond-order sum.  Charges are lexed but do not adjust the valence table,
so e.g. ``[NH4+]`` is rejected.  ``H``, ``@`` and ``+`` outside brackets
are reported as ``VALENCE_VIOLATION`` at the offending token.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

# Maximum allowed bond-order sum per element.  Explicit bracket hydrogens
# count toward the sum; an undershoot is filled by implicit hydrogens.
MAX_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 5, "S": 6,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
}

ORGANIC_ATOMS = ("C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "B")
AROMATIC_ATOMS = ("c", "n", "o", "p", "s")
BOND_ORDERS = {"-": 1.0, "=": 2.0, "#": 3.0, "/": 1.0, "\\": 1.0}
RING_DIGITS = tuple("123456789")


class FailureKind(enum.Enum):
    LEX_ERROR = "lex_error"
    UNBALANCED_PAREN = "unbalanced_paren"
    UNPAIRED_RING_BOND = "unpaired_ring_bond"
    DANGLING_BOND = "dangling_bond"
    VALENCE_VIOLATION = "valence_violation"
    EMPTY = "empty"


class LexError(ValueError):
    """Input contains a character sequence outside the alphabet."""

    def __init__(self, position: int, text: str):
        self.position = position
        super().__init__(f"unknown token at position {position}: {text[position:position + 2]!r}")


class CodecError(ValueError):
    """One-hot matrix is malformed or the token sequence does not fit."""


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of ``check_validity``; failure fields are None iff valid."""

    valid: bool
    failure_kind: FailureKind | None = None
    failure_position: int | None = None


class SmilesAlphabet:
    """Ordered token set backing the lexer and the one-hot codec."""

    def __init__(self, tokens: list[str], stop_token: str, version: int):
        if tokens.count(stop_token) != 1:
            raise ValueError("alphabet must contain the stop token exactly once")
        if len(set(tokens)) != len(tokens):
            raise ValueError("alphabet tokens must be unique")
        self.tokens = list(tokens)
        self.stop_token = stop_token
        self.version = version
        self.index = {t: i for i, t in enumerate(tokens)}
        # Lexable tokens grouped by length, longest first, stop excluded.
        lexable = [t for t in tokens if t != stop_token]
        self._lengths = sorted({len(t) for t in lexable}, reverse=True)
        self._by_length = {n: {t for t in lexable if len(t) == n} for n in self._lengths}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def stop_index(self) -> int:
        return self.index[self.stop_token]


_DEFAULT_ALPHABET: SmilesAlphabet | None = None


def default_alphabet() -> SmilesAlphabet:
    """Load the packaged alphabet definition (cached)."""
    global _DEFAULT_ALPHABET
    if _DEFAULT_ALPHABET is None:
        raw = resources.files("cbolt.data").joinpath("alphabet.json").read_text()
        doc = json.loads(raw)
        _DEFAULT_ALPHABET = SmilesAlphabet(doc["tokens"], doc["stop_token"], doc["version"])
    return _DEFAULT_ALPHABET


def _lex(s: str, alphabet: SmilesAlphabet) -> tuple[list[tuple[str, int]], int | None]:
    """Longest-match lexer.

    Returns (pairs, error_position); pairs hold (token, start index).  On
    an unknown character the tokens lexed so far are returned together
    with the failing position.
    """
    out: list[tuple[str, int]] = []
    i = 0
    n = len(s)
    while i < n:
        for length in alphabet._lengths:
            cand = s[i:i + length]
            if len(cand) == length and cand in alphabet._by_length[length]:
                out.append((cand, i))
                i += length
                break
        else:
            return out, i
    return out, None


def tokenize(s: str, alphabet: SmilesAlphabet | None = None) -> list[str]:
    """Split a SMILES string into alphabet tokens (longest match first).

    Raises LexError at the first character that starts no known token.
    """
    alphabet = alphabet or default_alphabet()
    s = s.rstrip()
    pairs, err = _lex(s, alphabet)
    if err is not None:
        raise LexError(err, s)
    return [t for t, _ in pairs]


def encode(s: str, alphabet: SmilesAlphabet | None = None, max_len: int = 64) -> np.ndarray:
    """One-hot encode a lexable string into a (max_len, |alphabet|) uint8 matrix.

    Rows beyond the token sequence carry the stop symbol.
    """
    alphabet = alphabet or default_alphabet()
    toks = tokenize(s, alphabet)
    if len(toks) > max_len:
        raise CodecError(f"token count {len(toks)} exceeds max_len {max_len}")
    mat = np.zeros((max_len, len(alphabet)), dtype=np.uint8)
    for r, t in enumerate(toks):
        mat[r, alphabet.index[t]] = 1
    mat[len(toks):, alphabet.stop_index] = 1
    return mat


def decode_one_hot(matrix: np.ndarray, alphabet: SmilesAlphabet | None = None) -> str:
    """Invert ``encode``: concatenate tokens up to the first stop row.

    Every row must be exactly one-hot; anything else is a CodecError.
    """
    alphabet = alphabet or default_alphabet()
    mat = np.asarray(matrix)
    if mat.ndim != 2 or mat.shape[1] != len(alphabet):
        raise CodecError(f"expected shape (T, {len(alphabet)}), got {mat.shape}")
    if not np.isin(mat, (0, 1)).all():
        raise CodecError("matrix entries must be 0 or 1")
    row_sums = mat.sum(axis=1)
    bad = np.nonzero(row_sums != 1)[0]
    if bad.size:
        raise CodecError(f"row {bad[0]} is not one-hot")
    cols = mat.argmax(axis=1)
    toks = []
    for c in cols:
        if c == alphabet.stop_index:
            break
        toks.append(alphabet.tokens[c])
    return "".join(toks)


@dataclass
class _Atom:
    symbol: str
    aromatic: bool
    position: int
    bond_sum: float = 0.0
    aromatic_bonds: int = 0


def _fail(kind: FailureKind, pos: int) -> ValidityReport:
    return ValidityReport(False, kind, pos)


def check_validity(s: str, alphabet: SmilesAlphabet | None = None) -> ValidityReport:
    """Validity per the module's documented local semantics.

    Structural errors are reported at the first offending token during
    the left-to-right scan; end-of-string checks run in the order
    dangling bond, unbalanced parenthesis, unpaired ring bond, and the
    valence table check runs last over atoms in input order.
    """
    alphabet = alphabet or default_alphabet()
    s = s.rstrip()
    if not s:
        return _fail(FailureKind.EMPTY, 0)
    pairs, err = _lex(s, alphabet)
    if err is not None:
        return _fail(FailureKind.LEX_ERROR, err)

    atoms: list[_Atom] = []
    prev: int | None = None
    pending_bond: tuple[float, int] | None = None  # (order, position)
    stack: list[tuple[int, int, int]] = []  # (prev atom, atom count at push, position)
    ring_open: dict[str, tuple[int, float | None, int]] = {}

    def bond(a: int, b: int, order: float | None) -> None:
        if order is None:
            order = 1.5 if atoms[a].aromatic and atoms[b].aromatic else 1.0
        atoms[a].bond_sum += order
        atoms[b].bond_sum += order
        if order == 1.5:
            atoms[a].aromatic_bonds += 1
            atoms[b].aromatic_bonds += 1

    i = 0
    n = len(pairs)
    while i < n:
        tok, pos = pairs[i]
        if tok in ORGANIC_ATOMS or tok in AROMATIC_ATOMS:
            atoms.append(_Atom(tok, tok in AROMATIC_ATOMS, pos))
            new = len(atoms) - 1
            if prev is not None:
                bond(prev, new, pending_bond[0] if pending_bond else None)
            pending_bond = None
            prev = new
            i += 1
        elif tok == "[":
            consumed, atom_or_pos = _parse_bracket(pairs, i)
            if consumed == 0:
                return _fail(FailureKind.VALENCE_VIOLATION, atom_or_pos)
            atoms.append(atom_or_pos)
            new = len(atoms) - 1
            if prev is not None:
                bond(prev, new, pending_bond[0] if pending_bond else None)
            pending_bond = None
            prev = new
            i += consumed
        elif tok in BOND_ORDERS:
            if prev is None or pending_bond is not None:
                return _fail(FailureKind.DANGLING_BOND, pos)
            pending_bond = (BOND_ORDERS[tok], pos)
            i += 1
        elif tok in RING_DIGITS or tok.startswith("%"):
            if prev is None:
                return _fail(FailureKind.UNPAIRED_RING_BOND, pos)
            if tok in ring_open:
                other, other_order, _ = ring_open.pop(tok)
                if other == prev:
                    return _fail(FailureKind.UNPAIRED_RING_BOND, pos)
                order = pending_bond[0] if pending_bond else other_order
                bond(other, prev, order)
            else:
                ring_open[tok] = (prev, pending_bond[0] if pending_bond else None, pos)
            pending_bond = None
            i += 1
        elif tok == "(":
            if prev is None or pending_bond is not None:
                kind = FailureKind.UNBALANCED_PAREN if prev is None else FailureKind.DANGLING_BOND
                return _fail(kind, pos)
            stack.append((prev, len(atoms), pos))
            i += 1
        elif tok == ")":
            if pending_bond is not None:
                return _fail(FailureKind.DANGLING_BOND, pos)
            if not stack:
                return _fail(FailureKind.UNBALANCED_PAREN, pos)
            opener_prev, count_at_open, _ = stack.pop()
            if len(atoms) == count_at_open:  # empty branch
                return _fail(FailureKind.UNBALANCED_PAREN, pos)
            prev = opener_prev
            i += 1
        else:  # H, @, +, ] outside a bracket
            kind = FailureKind.UNBALANCED_PAREN if tok == "]" else FailureKind.VALENCE_VIOLATION
            return _fail(kind, pos)

    if pending_bond is not None:
        return _fail(FailureKind.DANGLING_BOND, pending_bond[1])
    if stack:
        return _fail(FailureKind.UNBALANCED_PAREN, stack[0][2])
    if ring_open:
        first = min(ring_open.values(), key=lambda v: v[2])
        return _fail(FailureKind.UNPAIRED_RING_BOND, first[2])

    for atom in atoms:
        limit = MAX_VALENCE[atom.symbol.capitalize() if atom.aromatic else atom.symbol]
        total = atom.bond_sum
        if atom.aromatic:
            if atom.aromatic_bonds < 2:
                return _fail(FailureKind.VALENCE_VIOLATION, atom.position)
            total = math.floor(total + 1e-9)
        if total > limit:
            return _fail(FailureKind.VALENCE_VIOLATION, atom.position)
    return ValidityReport(True)


def _parse_bracket(pairs: list[tuple[str, int]], start: int):
    """Parse a bracket atom starting at pairs[start] == '['.

    Returns (tokens consumed, _Atom) on success or (0, error position) on
    a malformed bracket.  Accepted content: atom symbol, optional '@'
    marks, optional H with an optional count digit, optional charge sign
    with an optional magnitude digit or sign repetition.
    """
    i = start + 1
    n = len(pairs)
    if i >= n:
        return 0, pairs[start][1]
    tok, pos = pairs[i]
    if tok not in ORGANIC_ATOMS and tok not in AROMATIC_ATOMS:
        return 0, pos
    atom = _Atom(tok, tok in AROMATIC_ATOMS, pairs[start][1])
    i += 1
    while i < n and pairs[i][0] == "@":
        i += 1
    if i < n and pairs[i][0] == "H":
        h = 1
        i += 1
        if i < n and pairs[i][0] in RING_DIGITS:
            h = int(pairs[i][0])
            i += 1
        atom.bond_sum += h
    if i < n and pairs[i][0] in ("+", "-"):
        sign = pairs[i][0]
        i += 1
        if i < n and pairs[i][0] in RING_DIGITS:
            i += 1
        else:
            while i < n and pairs[i][0] == sign:
                i += 1
    if i >= n or pairs[i][0] != "]":
        return 0, pairs[i][1] if i < n else pairs[n - 1][1]
    return i - start + 1, atom


def is_drug_like(s: str, alphabet: SmilesAlphabet | None = None) -> bool:
    """True iff the string is valid and at least 5 characters long."""
    stripped = s.rstrip()
    return check_validity(stripped, alphabet).valid and len(stripped) >= 5


def label_latent_point(decoded: list[str], threshold: float = 0.20,
                       alphabet: SmilesAlphabet | None = None) -> int:
    """Binary label for a latent point from its decode attempts.

    1 iff the drug-like fraction strictly exceeds the threshold.
    """
    if not decoded:
        raise ValueError("decoded outcome list is empty")
    frac = sum(is_drug_like(s, alphabet) for s in decoded) / len(decoded)
    return 1 if frac > threshold else 0
