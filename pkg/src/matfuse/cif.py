"""CIF parsing into validated crystal structures.

Supports the practical subset emitted by Materials Project style exports:
cell lengths/angles, symmetry operations as xyz strings, and the atom
site loop with fractional coordinates. Quoted strings and ``#`` comments
are handled; only the first data block of a multi-block file is read;
unrecognized tags are ignored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .elements import lookup_z, element_table
from .errors import (DegenerateCell, EmptyStructure, MalformedLoop,
                     MissingCellParameter, UnknownElement)

MERGE_TOL = 1e-4  # fractional, per axis, with periodic wraparound

CELL_TAGS = ("_cell_length_a", "_cell_length_b", "_cell_length_c",
             "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma")
SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")


@dataclass(frozen=True)
class SymmetryOp:
    """Affine map over fractional coordinates: f -> f @ R^T + t (mod 1)."""
    rotation: tuple  # 3x3 ints in {-1,0,1}, row-major
    translation: tuple  # 3 floats in [0,1)

    @classmethod
    def identity(cls):
        return cls(((1, 0, 0), (0, 1, 0), (0, 0, 1)), (0.0, 0.0, 0.0))

    def apply(self, frac):
        r = np.asarray(self.rotation, dtype=float)
        return (r @ np.asarray(frac, dtype=float)
                + np.asarray(self.translation)) % 1.0

    def as_xyz(self) -> str:
        parts = []
        for row, t in zip(self.rotation, self.translation):
            terms = []
            for coef, var in zip(row, "xyz"):
                if coef == 1:
                    terms.append(f"+{var}" if terms else var)
                elif coef == -1:
                    terms.append(f"-{var}")
            if t:
                frac = Fraction(t).limit_denominator(12)
                terms.append(f"+{frac.numerator}/{frac.denominator}")
            parts.append("".join(terms) if terms else "0")
        return ",".join(parts)


@dataclass(frozen=True)
class Site:
    symbol: str
    Z: int
    frac: tuple  # fractional (x, y, z), each in [0, 1)


@dataclass(frozen=True)
class CrystalStructure:
    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float
    sites: tuple = ()
    symmetry_ops: tuple = (SymmetryOp.identity(),)
    source_id: str = ""

    @property
    def lengths(self):
        return (self.a, self.b, self.c)

    @property
    def angles(self):
        return (self.alpha, self.beta, self.gamma)

    def volume(self) -> float:
        ca, cb, cg = (math.cos(math.radians(x)) for x in self.angles)
        arg = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg
        if arg <= 0:
            return 0.0
        return self.a * self.b * self.c * math.sqrt(arg)

    def formula(self) -> str:
        """Reduced chemical formula, elements in alphabetical order."""
        counts: dict[str, int] = {}
        for s in self.sites:
            counts[s.symbol] = counts.get(s.symbol, 0) + 1
        g = math.gcd(*counts.values()) if counts else 1
        return "".join(sym + (str(n // g) if n // g > 1 else "")
                       for sym, n in sorted(counts.items()))


def frac_to_cart(lattice: np.ndarray, frac) -> np.ndarray:
    """Fractional to cartesian, row-vector convention: f . lattice."""
    return np.asarray(frac, dtype=float) @ np.asarray(lattice, dtype=float)


# ---------------------------------------------------------------------------
# parsing

def _strip_comment(line: str) -> str:
    out, quote = [], None
    for i, ch in enumerate(line):
        if quote:
            out.append(ch)
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
            out.append(ch)
        elif ch == "#":
            break
        else:
            out.append(ch)
    return "".join(out)


def _tokenize(line: str) -> list[str]:
    return [m.group(1) or m.group(2) or m.group(3)
            for m in re.finditer(r"'([^']*)'|\"([^\"]*)\"|(\S+)", line)]


def _first_block(text: str) -> list[str]:
    lines = [_strip_comment(ln).strip() for ln in text.splitlines()]
    starts = [i for i, ln in enumerate(lines) if ln.lower().startswith("data_")]
    if starts:
        end = starts[1] if len(starts) > 1 else len(lines)
        lines = lines[starts[0] + 1:end]
    return [ln for ln in lines if ln]


def _number(token: str) -> float:
    # strip an "(3)" style standard uncertainty
    return float(re.sub(r"\([^)]*\)$", "", token))


_TERM_RE = re.compile(r"([+-]?)(\d+/\d+|\d*\.?\d+|[xyz])")


def parse_xyz_op(expr: str) -> SymmetryOp:
    """Parse an 'x,y+1/2,-z' style symmetry string."""
    rows, trans = [], []
    comps = expr.replace(" ", "").lower().split(",")
    if len(comps) != 3:
        raise MalformedLoop(f"bad symmetry expression {expr!r}")
    for comp in comps:
        row, t, pos = [0, 0, 0], 0.0, 0
        for m in _TERM_RE.finditer(comp):
            sign = -1 if m.group(1) == "-" else 1
            body = m.group(2)
            if body in "xyz":
                row["xyz".index(body)] += sign
            elif "/" in body:
                num, den = body.split("/")
                t += sign * float(num) / float(den)
            else:
                t += sign * float(body)
            pos = m.end()
        if pos != len(comp):
            raise MalformedLoop(f"bad symmetry expression {expr!r}")
        rows.append(tuple(row))
        trans.append(t % 1.0)
    return SymmetryOp(tuple(rows), tuple(trans))


def _element_from_token(token: str) -> str:
    m = re.match(r"([A-Z][a-z]?)", token)
    if not m or m.group(1) not in {r.symbol for r in element_table().values()}:
        raise UnknownElement(f"cannot map {token!r} to an element symbol")
    return m.group(1)


def parse_cif(text: str, source_id: str = "") -> CrystalStructure:
    """Parse CIF text into a validated CrystalStructure.

    Raises MissingCellParameter, UnknownElement, MalformedLoop,
    EmptyStructure or DegenerateCell on invalid input; never crashes on
    unrecognized tags.
    """
    lines = _first_block(text)
    scalars: dict[str, str] = {}
    loops: list[tuple[list[str], list[list[str]]]] = []

    i = 0
    while i < len(lines):
        ln = lines[i]
        if ln.lower() == "loop_" or ln.lower().startswith("loop_"):
            cols = []
            i += 1
            while i < len(lines) and lines[i].startswith("_"):
                cols.append(_tokenize(lines[i])[0].lower())
                i += 1
            tokens: list[str] = []
            while i < len(lines):
                nxt = lines[i]
                if nxt.startswith("_") or nxt.lower().startswith(("loop_", "data_")):
                    break
                tokens.extend(_tokenize(nxt))
                i += 1
            if cols:
                if len(tokens) % len(cols) != 0:
                    raise MalformedLoop(
                        f"loop with columns {cols} has {len(tokens)} tokens")
                rows = [tokens[k:k + len(cols)]
                        for k in range(0, len(tokens), len(cols))]
                loops.append((cols, rows))
        elif ln.startswith("_"):
            toks = _tokenize(ln)
            if len(toks) >= 2:
                scalars[toks[0].lower()] = " ".join(toks[1:])
            i += 1
        else:
            i += 1

    missing = [t for t in CELL_TAGS if t not in scalars]
    if missing:
        raise MissingCellParameter(f"missing cell tags: {missing}")
    a, b, c, alpha, beta, gamma = (_number(scalars[t]) for t in CELL_TAGS)

    ops = [SymmetryOp.identity()]
    for cols, rows in loops:
        for tag in SYMOP_TAGS:
            if tag in cols:
                k = cols.index(tag)
                for row in rows:
                    op = parse_xyz_op(row[k])
                    if op not in ops:
                        ops.append(op)

    sites = []
    for cols, rows in loops:
        if not any(c == "_atom_site_fract_x" for c in cols):
            continue
        ix = cols.index("_atom_site_fract_x")
        iy = cols.index("_atom_site_fract_y")
        iz = cols.index("_atom_site_fract_z")
        if "_atom_site_type_symbol" in cols:
            isym = cols.index("_atom_site_type_symbol")
        elif "_atom_site_label" in cols:
            isym = cols.index("_atom_site_label")
        else:
            raise MalformedLoop("atom site loop lacks a symbol/label column")
        for row in rows:
            sym = _element_from_token(row[isym])
            frac = tuple(_number(row[j]) % 1.0 for j in (ix, iy, iz))
            sites.append(Site(sym, lookup_z(sym), frac))
    if not sites:
        raise EmptyStructure("no atomic sites found")

    s = CrystalStructure(a, b, c, alpha, beta, gamma, tuple(sites),
                         tuple(ops), source_id)
    if s.volume() <= 1e-9:
        raise DegenerateCell(f"cell volume {s.volume():g} is not positive")
    return s


# ---------------------------------------------------------------------------
# symmetry expansion

def _dedupe(coords: list[np.ndarray]) -> list[np.ndarray]:
    kept: list[np.ndarray] = []
    for f in coords:
        dup = False
        for g in kept:
            d = np.abs(f - g)
            if np.all(np.minimum(d, 1.0 - d) < MERGE_TOL):
                dup = True
                break
        if not dup:
            kept.append(f)
    return kept


def expand_symmetry(s: CrystalStructure) -> CrystalStructure:
    """Replace each site by its orbit under the symmetry operations.

    Coordinates are reduced mod 1 and near-coincident images merged; the
    result carries only the identity operation. Idempotent.
    """
    new_sites = []
    for site in s.sites:
        orbit = [op.apply(site.frac) for op in s.symmetry_ops]
        for f in _dedupe(orbit):
            new_sites.append(Site(site.symbol, site.Z, tuple(float(x) % 1.0
                                                             for x in f)))
    return replace(s, sites=tuple(new_sites),
                   symmetry_ops=(SymmetryOp.identity(),))


def structure_to_cif(s: CrystalStructure) -> str:
    """Serialize back to CIF (round-trips through parse_cif)."""
    out = [f"data_{s.source_id or 'structure'}"]
    for tag, val in zip(CELL_TAGS, (s.a, s.b, s.c, s.alpha, s.beta, s.gamma)):
        out.append(f"{tag}   {val:.9f}")
    out.append("loop_")
    out.append("_symmetry_equiv_pos_as_xyz")
    for op in s.symmetry_ops:
        out.append(f"  '{op.as_xyz()}'")
    out.append("loop_")
    out.append("_atom_site_type_symbol")
    out.append("_atom_site_fract_x")
    out.append("_atom_site_fract_y")
    out.append("_atom_site_fract_z")
    for site in s.sites:
        x, y, z = site.frac
        out.append(f"  {site.symbol} {x:.9f} {y:.9f} {z:.9f}")
    return "\n".join(out) + "\n"


def structure_to_dict(s: CrystalStructure) -> dict:
    """JSON-friendly dump used by the CLI debug subcommand."""
    return {
        "source_id": s.source_id,
        "cell": {"a": s.a, "b": s.b, "c": s.c,
                 "alpha": s.alpha, "beta": s.beta, "gamma": s.gamma,
                 "volume": s.volume()},
        "formula": s.formula(),
        "symmetry_ops": [op.as_xyz() for op in s.symmetry_ops],
        "sites": [{"symbol": t.symbol, "Z": t.Z, "frac": list(t.frac)}
                  for t in s.sites],
    }
