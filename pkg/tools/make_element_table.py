"""Regenerate src/matfuse/data/element_properties.tsv.

Group, period, block and valence-electron counts are derived from the
periodic-table layout; electronegativity, first ionization energy,
covalent radius and electron affinity are tabulated literals (noble-gas
electronegativities use Allen-scale estimates, unmeasured affinities 0).
"""

import pathlib

# Z: (symbol, pauling_en, ionization_ev, covalent_radius_pm, electron_affinity_ev)
RAW = {
    1: ("H", 2.20, 13.598, 31, 0.754),
    2: ("He", 4.16, 24.587, 28, 0.0),
    3: ("Li", 0.98, 5.392, 128, 0.618),
    4: ("Be", 1.57, 9.323, 96, 0.0),
    5: ("B", 2.04, 8.298, 84, 0.277),
    6: ("C", 2.55, 11.260, 76, 1.263),
    7: ("N", 3.04, 14.534, 71, 0.0),
    8: ("O", 3.44, 13.618, 66, 1.461),
    9: ("F", 3.98, 17.423, 57, 3.401),
    10: ("Ne", 4.79, 21.565, 58, 0.0),
    11: ("Na", 0.93, 5.139, 166, 0.548),
    12: ("Mg", 1.31, 7.646, 141, 0.0),
    13: ("Al", 1.61, 5.986, 121, 0.441),
    14: ("Si", 1.90, 8.152, 111, 1.390),
    15: ("P", 2.19, 10.487, 107, 0.746),
    16: ("S", 2.58, 10.360, 105, 2.077),
    17: ("Cl", 3.16, 12.968, 102, 3.613),
    18: ("Ar", 3.24, 15.760, 106, 0.0),
    19: ("K", 0.82, 4.341, 203, 0.501),
    20: ("Ca", 1.00, 6.113, 176, 0.025),
    21: ("Sc", 1.36, 6.561, 170, 0.188),
    22: ("Ti", 1.54, 6.828, 160, 0.079),
    23: ("V", 1.63, 6.746, 153, 0.525),
    24: ("Cr", 1.66, 6.767, 139, 0.666),
    25: ("Mn", 1.55, 7.434, 139, 0.0),
    26: ("Fe", 1.83, 7.902, 132, 0.151),
    27: ("Co", 1.88, 7.881, 126, 0.662),
    28: ("Ni", 1.91, 7.640, 124, 1.156),
    29: ("Cu", 1.90, 7.726, 132, 1.235),
    30: ("Zn", 1.65, 9.394, 122, 0.0),
    31: ("Ga", 1.81, 5.999, 122, 0.430),
    32: ("Ge", 2.01, 7.899, 120, 1.233),
    33: ("As", 2.18, 9.789, 119, 0.804),
    34: ("Se", 2.55, 9.752, 120, 2.021),
    35: ("Br", 2.96, 11.814, 120, 3.364),
    36: ("Kr", 2.97, 14.000, 116, 0.0),
    37: ("Rb", 0.82, 4.177, 220, 0.486),
    38: ("Sr", 0.95, 5.695, 195, 0.048),
    39: ("Y", 1.22, 6.217, 190, 0.307),
    40: ("Zr", 1.33, 6.634, 175, 0.426),
    41: ("Nb", 1.60, 6.759, 164, 0.893),
    42: ("Mo", 2.16, 7.092, 154, 0.748),
    43: ("Tc", 1.90, 7.280, 147, 0.550),
    44: ("Ru", 2.20, 7.361, 146, 1.050),
    45: ("Rh", 2.28, 7.459, 142, 1.137),
    46: ("Pd", 2.20, 8.337, 139, 0.562),
    47: ("Ag", 1.93, 7.576, 145, 1.302),
    48: ("Cd", 1.69, 8.994, 144, 0.0),
    49: ("In", 1.78, 5.786, 142, 0.300),
    50: ("Sn", 1.96, 7.344, 139, 1.112),
    51: ("Sb", 2.05, 8.608, 139, 1.046),
    52: ("Te", 2.10, 9.010, 138, 1.971),
    53: ("I", 2.66, 10.451, 139, 3.059),
    54: ("Xe", 2.58, 12.130, 140, 0.0),
    55: ("Cs", 0.79, 3.894, 244, 0.472),
    56: ("Ba", 0.89, 5.212, 215, 0.145),
    57: ("La", 1.10, 5.577, 207, 0.470),
    58: ("Ce", 1.12, 5.539, 204, 0.500),
    59: ("Pr", 1.13, 5.473, 203, 0.500),
    60: ("Nd", 1.14, 5.525, 201, 0.500),
    61: ("Pm", 1.13, 5.582, 199, 0.500),
    62: ("Sm", 1.17, 5.644, 198, 0.500),
    63: ("Eu", 1.20, 5.670, 198, 0.500),
    64: ("Gd", 1.20, 6.150, 196, 0.500),
    65: ("Tb", 1.22, 5.864, 194, 0.500),
    66: ("Dy", 1.23, 5.939, 192, 0.500),
    67: ("Ho", 1.24, 6.022, 192, 0.500),
    68: ("Er", 1.24, 6.108, 189, 0.500),
    69: ("Tm", 1.25, 6.184, 190, 0.500),
    70: ("Yb", 1.10, 6.254, 187, 0.500),
    71: ("Lu", 1.27, 5.426, 187, 0.500),
    72: ("Hf", 1.30, 6.825, 175, 0.017),
    73: ("Ta", 1.50, 7.550, 170, 0.322),
    74: ("W", 2.36, 7.864, 162, 0.815),
    75: ("Re", 1.90, 7.834, 151, 0.150),
    76: ("Os", 2.20, 8.438, 144, 1.100),
    77: ("Ir", 2.20, 8.967, 141, 1.565),
    78: ("Pt", 2.28, 8.959, 136, 2.128),
    79: ("Au", 2.54, 9.226, 136, 2.309),
    80: ("Hg", 2.00, 10.438, 132, 0.0),
    81: ("Tl", 1.62, 6.108, 145, 0.200),
    82: ("Pb", 2.33, 7.417, 146, 0.356),
    83: ("Bi", 2.02, 7.286, 148, 0.946),
    84: ("Po", 2.00, 8.417, 140, 1.900),
    85: ("At", 2.20, 9.318, 150, 2.800),
    86: ("Rn", 2.20, 10.749, 150, 0.0),
    87: ("Fr", 0.70, 4.073, 260, 0.460),
    88: ("Ra", 0.90, 5.278, 221, 0.100),
    89: ("Ac", 1.10, 5.380, 215, 0.350),
    90: ("Th", 1.30, 6.307, 206, 0.600),
    91: ("Pa", 1.50, 5.890, 200, 0.550),
    92: ("U", 1.38, 6.194, 196, 0.530),
    93: ("Np", 1.36, 6.266, 190, 0.480),
    94: ("Pu", 1.28, 6.026, 187, 0.500),
    95: ("Am", 1.30, 5.974, 180, 0.100),
    96: ("Cm", 1.30, 5.992, 169, 0.500),
    97: ("Bk", 1.30, 6.198, 168, 0.500),
    98: ("Cf", 1.30, 6.282, 168, 0.500),
    99: ("Es", 1.30, 6.368, 165, 0.500),
    100: ("Fm", 1.30, 6.500, 167, 0.500),
    101: ("Md", 1.30, 6.580, 173, 0.500),
    102: ("No", 1.30, 6.650, 176, 0.500),
    103: ("Lr", 1.30, 4.960, 161, 0.500),
}

NOBLE = [0, 2, 10, 18, 36, 54, 86, 118]


def layout(z):
    period = next(p for p in range(1, 8) if z <= NOBLE[p])
    pos = z - NOBLE[period - 1]
    if period == 1:
        group = 1 if pos == 1 else 18
        block = "s"
    elif period in (2, 3):
        group = pos if pos <= 2 else pos + 10
        block = "s" if pos <= 2 else "p"
    elif period in (4, 5):
        group = pos
        block = "s" if pos <= 2 else ("d" if pos <= 12 else "p")
    else:
        if pos <= 2:
            group, block = pos, "s"
        elif pos <= 17:
            group = 3
            block = "d" if pos == 3 else "f"
        else:
            group = pos - 14
            block = "d" if group <= 12 else "p"
    if block == "s":
        valence = 2 if z == 2 else group
    elif block == "p":
        valence = group - 10
    elif block == "d":
        valence = group
    else:
        valence = z - NOBLE[period - 1]
    return group, period, block, valence


def main():
    out = pathlib.Path(__file__).resolve().parents[1] / "src/matfuse/data/element_properties.tsv"
    lines = ["# element property table v1",
             "Z\tsymbol\tgroup\tperiod\tblock\telectronegativity\tionization_ev\tcovalent_radius_pm\tvalence\telectron_affinity_ev"]
    for z in range(1, 104):
        sym, en, ie, r, ea = RAW[z]
        g, p, b, v = layout(z)
        lines.append(f"{z}\t{sym}\t{g}\t{p}\t{b}\t{en}\t{ie}\t{r}\t{v}\t{ea}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out} ({len(lines) - 2} elements)")


if __name__ == "__main__":
    main()
