"""Element property table and one-hot atom featurization.

The table ships with the package (data/element_properties.tsv) and covers
Z = 1..103 with nine attributes per element: three categorical (group,
period, block) and six continuous (electronegativity, first ionization
energy, covalent radius, valence electron count, electron affinity,
atomic number). Continuous attributes are one-hot binned into 10
equal-width bins over the table's min-max range.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import UnknownElement

N_BINS = 10

CATEGORICAL = ("group", "period", "block")
CONTINUOUS = ("electronegativity", "ionization_ev", "covalent_radius_pm",
              "valence", "electron_affinity_ev", "Z")

BLOCKS = ("s", "p", "d", "f")


@dataclass(frozen=True)
class ElementRecord:
    Z: int
    symbol: str
    group: int
    period: int
    block: str
    electronegativity: float
    ionization_ev: float
    covalent_radius_pm: float
    valence: int
    electron_affinity_ev: float


@lru_cache(maxsize=1)
def element_table() -> dict[int, ElementRecord]:
    """Load the shipped property table, keyed by atomic number."""
    text = (importlib.resources.files("matfuse.data")
            / "element_properties.tsv").read_text()
    table = {}
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("Z\t"):
            continue
        z, sym, grp, per, blk, en, ie, rad, val, ea = line.split("\t")
        rec = ElementRecord(int(z), sym, int(grp), int(per), blk,
                            float(en), float(ie), float(rad), int(val),
                            float(ea))
        table[rec.Z] = rec
    return table


@lru_cache(maxsize=1)
def symbol_to_z() -> dict[str, int]:
    return {rec.symbol: z for z, rec in element_table().items()}


def lookup_z(symbol: str) -> int:
    """Map an element symbol (case-sensitive, e.g. 'Fe') to Z."""
    z = symbol_to_z().get(symbol)
    if z is None:
        raise UnknownElement(f"unknown element symbol {symbol!r}")
    return z


class AtomFeatureSpec:
    """Binning layout for the nine per-element attributes.

    Categorical attributes are one-hot over their category sets; the six
    continuous ones over ``n_bins`` equal-width bins spanning the table
    range. The concatenated feature length is the same for every element
    and exactly one position per attribute block is hot.
    """

    def __init__(self, n_bins: int = N_BINS):
        table = element_table()
        self.n_bins = n_bins
        self.groups = list(range(1, 19))
        self.periods = sorted({r.period for r in table.values()})
        self.blocks = list(BLOCKS)
        self.ranges = {}
        for attr in CONTINUOUS:
            vals = [self._raw(r, attr) for r in table.values()]
            self.ranges[attr] = (min(vals), max(vals))
        self.block_widths = ([len(self.groups), len(self.periods),
                              len(self.blocks)] + [n_bins] * len(CONTINUOUS))
        self.length = sum(self.block_widths)

    @staticmethod
    def _raw(rec: ElementRecord, attr: str) -> float:
        return float(rec.Z) if attr == "Z" else float(getattr(rec, attr))

    def bin_index(self, attr: str, value: float) -> int:
        lo, hi = self.ranges[attr]
        if hi == lo:
            return 0
        k = int((value - lo) / (hi - lo) * self.n_bins)
        return min(max(k, 0), self.n_bins - 1)

    def hot_indices(self, z: int) -> list[int]:
        """Absolute hot positions (one per attribute) for element Z."""
        rec = element_table().get(z)
        if rec is None:
            raise UnknownElement(f"no element with Z={z}")
        local = [self.groups.index(rec.group),
                 self.periods.index(rec.period),
                 self.blocks.index(rec.block)]
        local += [self.bin_index(a, self._raw(rec, a)) for a in CONTINUOUS]
        hot, offset = [], 0
        for idx, width in zip(local, self.block_widths):
            hot.append(offset + idx)
            offset += width
        return hot


def atom_features(z: int, spec: AtomFeatureSpec) -> np.ndarray:
    """One-hot feature vector for element Z under the given spec."""
    vec = np.zeros(spec.length)
    vec[spec.hot_indices(z)] = 1.0
    return vec
