import pytest

from matfuse.cif import CrystalStructure, Site
from matfuse.elements import AtomFeatureSpec
from matfuse.graph import GraphConfig
from matfuse.model import ModelConfig, init_params


def make_cif(a=4.0, b=None, c=None, alpha=90.0, beta=90.0, gamma=90.0,
             sites=(("Na", 0.0, 0.0, 0.0),), ops=("x, y, z",),
             drop_tags=()):
    b = a if b is None else b
    c = a if c is None else c
    lines = ["data_test"]
    cell = {"_cell_length_a": a, "_cell_length_b": b, "_cell_length_c": c,
            "_cell_angle_alpha": alpha, "_cell_angle_beta": beta,
            "_cell_angle_gamma": gamma}
    for tag, val in cell.items():
        if tag not in drop_tags:
            lines.append(f"{tag} {val}")
    lines += ["loop_", "_symmetry_equiv_pos_as_xyz"]
    lines += [f"  '{op}'" for op in ops]
    lines += ["loop_", "_atom_site_type_symbol", "_atom_site_fract_x",
              "_atom_site_fract_y", "_atom_site_fract_z"]
    lines += [f"  {sym} {x} {y} {z}" for sym, x, y, z in sites]
    return "\n".join(lines) + "\n"


ROCKSALT = make_cif(a=5.64, sites=(("Na", 0.0, 0.0, 0.0),
                                   ("Na", 0.5, 0.5, 0.0),
                                   ("Na", 0.5, 0.0, 0.5),
                                   ("Na", 0.0, 0.5, 0.5),
                                   ("Cl", 0.5, 0.0, 0.0),
                                   ("Cl", 0.0, 0.5, 0.0),
                                   ("Cl", 0.0, 0.0, 0.5),
                                   ("Cl", 0.5, 0.5, 0.5)))


def random_structure(rng, n_sites=None, symbols=("Na", "Cl", "Fe", "O", "Si")):
    """Random valid P1 structure with a well-conditioned cell."""
    n = n_sites or rng.integers(1, 4)
    a, b, c = rng.uniform(3.0, 6.0, 3)
    alpha, beta, gamma = rng.uniform(70.0, 110.0, 3)
    s = CrystalStructure(a, b, c, alpha, beta, gamma,
                         tuple(Site(sym, {"Na": 11, "Cl": 17, "Fe": 26,
                                          "O": 8, "Si": 14}[sym],
                                    tuple(rng.uniform(0, 1, 3)))
                               for sym in rng.choice(symbols, n)))
    if s.volume() < 10.0:
        return random_structure(rng, n_sites, symbols)
    return s


MICRO_GRAPH_CFG = GraphConfig(cutoff=4.0, max_neighbors=6, gauss_min=0.0,
                              gauss_max=4.0, gauss_step=1.0, gauss_sigma=1.0)


def micro_model_cfg(**overrides):
    base = dict(d_g=4, n_conv=1, d_t=4, n_text_layers=1, n_heads=2, d_ff=8,
                d_m=4, n_fusion_heads=2, dropout=False)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def feature_spec():
    return AtomFeatureSpec()


@pytest.fixture
def micro_setup(feature_spec):
    """Micro graph config + model config + params for fast model tests."""
    cfg = micro_model_cfg()
    params = init_params(cfg, feature_spec.length,
                         MICRO_GRAPH_CFG.n_edge_features,
                         vocab_size=24, max_len=16, seed=7)
    return MICRO_GRAPH_CFG, cfg, params
