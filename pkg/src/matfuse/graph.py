"""Crystal graph construction: periodic neighbor search, atom one-hots,
Gaussian edge features."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cif import CrystalStructure, frac_to_cart
from .elements import AtomFeatureSpec, atom_features
from .errors import DegenerateCell

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphConfig:
    """Neighbor-search and edge-feature hyperparameters (CGCNN-style
    defaults; the source publication leaves them unspecified)."""
    cutoff: float = 8.0
    max_neighbors: int = 12
    gauss_min: float = 0.0
    gauss_max: float = 8.0
    gauss_step: float = 0.2
    gauss_sigma: float = 0.2

    @property
    def n_edge_features(self) -> int:
        return int(math.floor((self.gauss_max - self.gauss_min)
                              / self.gauss_step)) + 1


@dataclass(frozen=True)
class Edge:
    i: int          # center atom (the node being updated)
    j: int          # neighbor atom index
    offset: tuple   # periodic image of j, three integers
    distance: float


@dataclass(frozen=True)
class CrystalGraph:
    node_features: np.ndarray  # N x F_atom
    edges: tuple               # Edge tuple, directed (both ways present)
    edge_features: np.ndarray  # E x F_edge
    num_nodes: int


def build_lattice_matrix(a, b, c, alpha, beta, gamma) -> np.ndarray:
    """Row-vector lattice matrix, standard crystallographic convention:
    first row along x, second in the x-y plane."""
    al, be, ga = (math.radians(x) for x in (alpha, beta, gamma))
    ca, cb, cg, sg = math.cos(al), math.cos(be), math.cos(ga), math.sin(ga)
    cx = c * cb
    cy = c * (ca - cb * cg) / sg
    cz_sq = c * c - cx * cx - cy * cy
    if cz_sq <= 0:
        raise DegenerateCell(f"cell ({a},{b},{c},{alpha},{beta},{gamma}) "
                             "has non-positive volume")
    lat = np.array([[a, 0.0, 0.0],
                    [b * cg, b * sg, 0.0],
                    [cx, cy, math.sqrt(cz_sq)]])
    if np.linalg.det(lat) <= 1e-9:
        raise DegenerateCell(f"cell volume {np.linalg.det(lat):g} <= 1e-9")
    return lat


def _image_ranges(lattice: np.ndarray, cutoff: float) -> list[int]:
    # minimal supercell guaranteed to cover the cutoff: the spacing of
    # lattice planes normal to each axis is volume / |cross of the others|
    vol = abs(np.linalg.det(lattice))
    ranges = []
    for k in range(3):
        cross = np.cross(lattice[(k + 1) % 3], lattice[(k + 2) % 3])
        spacing = vol / np.linalg.norm(cross)
        ranges.append(int(math.ceil(cutoff / spacing)))
    return ranges


def neighbor_search(s: CrystalStructure, cutoff: float,
                    max_neighbors: int) -> list[Edge]:
    """All periodic neighbors within the cutoff, per atom, distance-sorted
    and truncated to max_neighbors (ties broken by (j, offset))."""
    lattice = build_lattice_matrix(s.a, s.b, s.c, s.alpha, s.beta, s.gamma)
    fracs = np.array([site.frac for site in s.sites])
    carts = frac_to_cart(lattice, fracs)
    na, nb, nc = _image_ranges(lattice, cutoff)
    offsets = np.array([(p, q, r)
                        for p in range(-na, na + 1)
                        for q in range(-nb, nb + 1)
                        for r in range(-nc, nc + 1)])
    shifts = offsets @ lattice  # cartesian image translations

    edges: list[Edge] = []
    for i in range(len(s.sites)):
        disp = carts[None, :, :] + shifts[:, None, :] - carts[i]  # O x N x 3
        dist = np.sqrt(np.sum(disp * disp, axis=2))
        cands = []
        for o in range(len(offsets)):
            for j in range(len(s.sites)):
                d = dist[o, j]
                if 1e-12 < d <= cutoff:
                    cands.append((d, j, tuple(int(x) for x in offsets[o])))
        cands.sort(key=lambda t: (t[0], t[1], t[2]))
        if not cands:
            log.warning("atom %d in %s has no neighbors within %.3g A",
                        i, s.source_id or "<structure>", cutoff)
        for d, j, off in cands[:max_neighbors]:
            edges.append(Edge(i, j, off, float(d)))
    return edges


def gaussian_expand(d: float, mu_min: float, mu_max: float,
                    step: float, sigma: float) -> np.ndarray:
    """exp(-(d - mu_k)^2 / sigma^2) over centers mu_min..mu_max."""
    centers = mu_min + step * np.arange(
        int(math.floor((mu_max - mu_min) / step)) + 1)
    out = np.exp(-((d - centers) ** 2) / sigma ** 2)
    # keep far tails strictly positive (exp underflows to 0 past ~745)
    return np.maximum(out, np.finfo(out.dtype).tiny)


def build_graph(s: CrystalStructure, cfg: GraphConfig,
                spec: AtomFeatureSpec | None = None) -> CrystalGraph:
    """Compose neighbor search, atom featurization and edge expansion.

    Node order equals site order in the structure; the structure should
    already be symmetry-expanded (identity ops only).
    """
    spec = spec or AtomFeatureSpec()
    nodes = np.array([atom_features(site.Z, spec) for site in s.sites])
    edges = neighbor_search(s, cfg.cutoff, cfg.max_neighbors)
    if edges:
        efeat = np.array([gaussian_expand(e.distance, cfg.gauss_min,
                                          cfg.gauss_max, cfg.gauss_step,
                                          cfg.gauss_sigma) for e in edges])
    else:
        efeat = np.zeros((0, cfg.n_edge_features))
    return CrystalGraph(nodes, tuple(edges), efeat, len(s.sites))
