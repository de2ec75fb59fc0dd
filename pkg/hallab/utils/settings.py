# hallab/utils/settings.py

"""
This module defines the fixed paths, numerical tolerances, desk-scale caps
and the default run configuration for the hallab tools.
"""

from pathlib import Path
from typing import Dict, Any  # Dict[...] instead of dict[...] for older interpreters


# === Project directory structure ===
ROOT_DIR = Path(__file__).resolve().parents[2]
DATA_DIR = ROOT_DIR / "hallab" / "data"
CONFIG_PATH = DATA_DIR / "config.json"
CACHE_DIR = DATA_DIR / "cache"
RESULTS_DIR = ROOT_DIR / "results"


# === Tolerances ===
TOL_EXACT: float = 1e-12        # algebraic identities (CAR, hermiticity, gauge invariance)
TOL_IDENTITY: float = 1e-10     # reconstructions, round trips, per-volume cross checks
TOL_FLOW: float = 1e-8          # OD / inverse Liouvillian identities, NEASS order conditions
TOL_DEGENERACY: float = 1e-9    # ground-sector multiplicity
TOL_VARIANCE: float = 1e-14     # gap certificate skip threshold
TOL_FERMI: float = 1e-8         # minimal distance of mu from the one-body spectrum
TOL_QUADRATURE_PLATEAU: float = 1e-6
TOL_GAP_SLACK: float = 1e-9     # gap certificate: min ratio >= g - slack
TOL_CS: float = 1e-6            # sigma_H before and after a locally generated automorphism
TOL_PROFILE: float = 1e-8       # sigma_H across inside-gap profiles
TOL_CURRENT: float = 1e-10      # currents at or below this are numerical zeros
FLUX_TOL: float = 1e-12


# === Desk-scale caps ===
MAX_MODES: int = 12             # full Fock space 2**12
MAX_NEASS_ORDER: int = 4
WORKER_COUNT: int = 4           # threads for grid scans
NEASS_PROBE_NU: int = 5         # decay-norm index d + 3 for d = 2


# === Default run configuration ===
DEFAULT_VALUES: Dict[str, Any] = {
    "lattice": {
        "L": 3,
        "flux": "1/3",          # fraction of 2 pi per plaquette, or a float b
        "pbc": True,
    },
    "model": {
        "mu": "auto",           # float or "auto" (middle of the gap above the lowest band)
        "lambda": 0.0,
        "lambdas": [],          # extra couplings for the continuity scan
        "interaction": None,    # None -> nearest neighbour densities, else list of records
    },
    "filter": {
        "g": None,              # None -> 0.9 * measured gap
        "profile": "poly",
        "t_max": None,          # None -> 20 / g
        "nodes": 20000,
    },
    "neass": {
        "order": 2,
        "eps_grid": {"log10_min": -2.5, "log10_max": -1.0, "count": 7},
        "include_zero": True,
        "probes": 20,
        "perturbation": None,   # None -> field drive only, else list of records for V
    },
    "spectrum": {
        "fluxes": "all",        # "all" -> p/L for p = 0..L-1, else list of "p/q"
    },
    "conductance": {
        "side": 48,
        "segments": [8, 16, 32],
        "eps": 0.01,
    },
    "chern_simons": {
        "strength": 0.1,
    },
    "gap_certificate": {
        "samples": 1000,
    },
    "outputs": {
        "directory": str(RESULTS_DIR),
        "formats": ["csv", "json"],
    },
    "tolerances": {
        "exact": TOL_EXACT,
        "identity": TOL_IDENTITY,
        "flow": TOL_FLOW,
        "degeneracy": TOL_DEGENERACY,
        "variance": TOL_VARIANCE,
        "gap_slack": TOL_GAP_SLACK,
        "chern_simons": TOL_CS,
        "profile": TOL_PROFILE,
        "current": TOL_CURRENT,
    },
    "seed": 1234,
}
