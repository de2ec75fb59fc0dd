# hallab/config_manager.py
import sys
from pathlib import Path
# Add project root to PYTHONPATH so that the 'hallab' package can be imported when running this module directly
root_path = Path(__file__).resolve().parent.parent
sys.path.append(str(root_path))

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import hallab
from hallab.exceptions import ConfigError
from hallab.fock import flux_quantized
from hallab.spectral_flow import PROFILES
from hallab.utils.log import get_logger
from hallab.utils.settings import CONFIG_PATH, DEFAULT_VALUES, MAX_MODES, MAX_NEASS_ORDER

logger = get_logger(__name__)


# === Run configuration ===
@dataclass(frozen=True)
class RunConfig:
    """
    Validated run configuration. Units: hbar = e = 1, lattice spacing 1,
    flux b in radians per plaquette.
    """
    L: int
    b: float
    flux: Optional[Fraction]
    pbc: bool
    mu: Union[float, str]
    lam: float
    lambdas: Tuple[float, ...]
    interaction: Optional[List[Dict[str, Any]]]
    g: Optional[float]
    profile: str
    t_max: Optional[float]
    nodes: int
    order: int
    eps_grid: Tuple[float, ...]
    include_zero: bool
    probes: int
    perturbation: Optional[List[Dict[str, Any]]]
    fluxes: Tuple[Fraction, ...]
    conductance_side: int
    segments: Tuple[int, ...]
    conductance_eps: float
    cs_strength: float
    gap_samples: int
    output_dir: Path
    formats: Tuple[str, ...]
    tolerances: Dict[str, float] = field(default_factory=dict)
    seed: int = 0
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def scan_eps(self) -> Tuple[float, ...]:
        return ((0.0,) if self.include_zero else ()) + self.eps_grid

    def tolerance(self, key: str) -> float:
        """Configured tolerance, falling back to the built-in default."""
        return float(self.tolerances.get(key, DEFAULT_VALUES["tolerances"][key]))

    def require_many_body(self) -> None:
        if self.L * self.L > MAX_MODES:
            raise ConfigError(f"many-body commands need L^2 <= {MAX_MODES}, got L={self.L}", {"L": self.L})

    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON dump."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_flux(value: Any) -> Tuple[float, Optional[Fraction]]:
    """'p/q' (fraction of 2 pi) or a raw float b."""
    if isinstance(value, str):
        try:
            frac = Fraction(value)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"cannot parse flux {value!r}: {e}", {"flux": value})
        return 2 * math.pi * float(frac), frac
    if isinstance(value, (int, float)):
        return float(value), None
    raise ConfigError(f"flux must be 'p/q' or a number, got {value!r}", {"flux": value})


def eps_values(raw: Any) -> Tuple[float, ...]:
    if isinstance(raw, dict):
        try:
            grid = np.logspace(float(raw["log10_min"]), float(raw["log10_max"]), int(raw["count"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid eps grid {raw!r}: {e}")
        values = tuple(float(x) for x in grid)
    elif isinstance(raw, (list, tuple)):
        values = tuple(float(x) for x in raw)
    else:
        raise ConfigError(f"eps grid must be a list or a log10 range, got {raw!r}")
    if not values:
        raise ConfigError("eps grid is empty")
    if any(v <= 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("eps grid must be strictly positive and strictly increasing", {"eps": list(values)})
    if values[-1] > 1.0:
        raise ConfigError("eps grid values must not exceed 1", {"eps": list(values)})
    return values


class ConfigManager:
    """
    The ConfigManager loads a JSON run configuration, merges missing keys with
    DEFAULT_VALUES section by section, resets invalid soft entries with a
    warning and builds a validated RunConfig. Violations that would change the
    physics (flux quantization, eps grid, order cap) raise ConfigError.
    """

    def __init__(self, path: Optional[Path] = None, persist: bool = False):
        self.path = Path(path) if path is not None else CONFIG_PATH
        self.persist = persist
        self.state: Dict[str, Any] = {}
        self._validate_and_load()

    def _validate_and_load(self) -> None:
        if not self.path.exists():
            if self.persist:
                logger.info(f"🆕 {self.path.name} not found, creating a new one.")
                self._save_json(self.path, {})
            else:
                logger.info(f"🆕 {self.path.name} not found, using defaults.")
        self.state = self._load_json(self.path) if self.path.exists() else {}
        changed = False

        for key, default_value in DEFAULT_VALUES.items():
            if key not in self.state:
                logger.debug(f"➕ Setting default for '{key}'")
                self.state[key] = copy.deepcopy(default_value)
                changed = True
            elif isinstance(default_value, dict):
                section = self.state[key]
                if not isinstance(section, dict):
                    logger.warning(f"⚠️ section '{key}' is not a mapping, resetting to defaults")
                    self.state[key] = copy.deepcopy(default_value)
                    changed = True
                    continue
                for sub, val in default_value.items():
                    if sub not in section:
                        section[sub] = copy.deepcopy(val)
                        changed = True
        changed |= self._correct_soft_entries()

        if changed and self.persist:
            self._save_json(self.path, self.state)
            logger.info(f"💾 {self.path.name} updated with default values and corrections.")

    def _reset(self, section: str, key: str, reason: str) -> None:
        default = DEFAULT_VALUES[section][key]
        logger.warning(f"⚠️ Invalid {section}.{key} {self.state[section][key]!r} ({reason}), resetting to {default!r}")
        self.state[section][key] = copy.deepcopy(default)

    def _correct_soft_entries(self) -> bool:
        changed = False
        filt = self.state["filter"]
        if filt["profile"] not in PROFILES:
            self._reset("filter", "profile", "unknown profile")
            changed = True
        nodes = filt["nodes"]
        if not isinstance(nodes, int) or nodes < 2 or nodes % 2:
            self._reset("filter", "nodes", "must be an even integer >= 2")
            changed = True
        if filt["g"] is not None and (not isinstance(filt["g"], (int, float)) or filt["g"] <= 0):
            self._reset("filter", "g", "must be positive")
            changed = True
        neass = self.state["neass"]
        if not isinstance(neass["probes"], int) or neass["probes"] < 1:
            self._reset("neass", "probes", "must be a positive integer")
            changed = True
        for key, value in list(self.state["tolerances"].items()):
            if key not in DEFAULT_VALUES["tolerances"]:
                logger.warning(f"⚠️ Unknown tolerance '{key}' ignored")
                del self.state["tolerances"][key]
                changed = True
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                self._reset("tolerances", key, "must be a positive number")
                changed = True
        samples = self.state["gap_certificate"]["samples"]
        if not isinstance(samples, int) or samples < 1:
            self._reset("gap_certificate", "samples", "must be a positive integer")
            changed = True
        if not isinstance(self.state["seed"], int):
            logger.warning(f"⚠️ Invalid seed {self.state['seed']!r}, resetting to {DEFAULT_VALUES['seed']}")
            self.state["seed"] = DEFAULT_VALUES["seed"]
            changed = True
        return changed

    def _load_json(self, path: Path) -> Dict[str, Any]:
        """
        Load JSON data from a file. A broken file is a hard error.
        Args:
            path (Path): File path to load.
        Returns:
            dict: Parsed JSON.
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read {path.name}: {e}", {"path": str(path)})
        if not isinstance(data, dict):
            raise ConfigError(f"{path.name} must hold a JSON object")
        return data

    def _save_json(self, path: Path, data: Dict[str, Any]) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=4)
        except OSError as e:
            logger.warning(f"⚠️ Error saving {path.name}: {e}")

    def get(self, key: str, default: Any = None) -> Any:
        return self.state.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """
        Assign a new value and persist it when the manager owns the file.
        Args:
            key (str): Configuration key.
            value (Any): Value to store.
        """
        self.state[key] = value
        if self.persist:
            self._save_json(self.path, self.state)

    def override(self, section: str, key: str, value: Any) -> None:
        """Command-line override of a single entry."""
        if value is not None:
            self.state.setdefault(section, {})[key] = value

    def run_config(self) -> RunConfig:
        """Build the RunConfig; hard violations raise ConfigError."""
        s = self.state
        lat, model, filt, neass = s["lattice"], s["model"], s["filter"], s["neass"]
        L = lat["L"]
        if not isinstance(L, int) or L < 1:
            raise ConfigError(f"lattice.L must be a positive integer, got {L!r}")
        b, frac = parse_flux(lat["flux"])
        pbc = bool(lat["pbc"])
        if pbc and not flux_quantized(b, L):
            raise ConfigError(f"flux b={b:.6g} violates b*L in 2 pi Z for L={L}", {"b": b, "L": L})
        mu = model["mu"]
        if mu != "auto" and not isinstance(mu, (int, float)):
            raise ConfigError(f"model.mu must be a number or 'auto', got {mu!r}")
        order = neass["order"]
        if not isinstance(order, int) or not 1 <= order <= MAX_NEASS_ORDER:
            raise ConfigError(f"neass.order must lie in 1..{MAX_NEASS_ORDER}, got {order!r}", {"order": order})
        perturbation = neass["perturbation"]
        if perturbation is not None and (not isinstance(perturbation, list)
                                         or not all(isinstance(r, dict) and {"sites", "expr"} <= set(r)
                                                    for r in perturbation)):
            raise ConfigError("neass.perturbation must be null or a list of {sites, expr} records",
                              {"perturbation": perturbation})
        fluxes = s["spectrum"]["fluxes"]
        if fluxes == "all":
            flux_list = tuple(Fraction(p, L) for p in range(L))
        else:
            if not fluxes:
                raise ConfigError("spectrum.fluxes is empty")
            flux_list = tuple(Fraction(str(f)) for f in fluxes)
        cond = s["conductance"]
        segments = tuple(int(x) for x in cond["segments"])
        if any(x > cond["side"] or x < 1 for x in segments):
            raise ConfigError(f"conductance segments {segments} must lie in 1..{cond['side']}")
        if not cond["eps"] > 0:
            raise ConfigError("conductance.eps must be positive")
        return RunConfig(
            L=L, b=b, flux=frac, pbc=pbc,
            mu=mu if mu == "auto" else float(mu),
            lam=float(model["lambda"]),
            lambdas=tuple(float(x) for x in model["lambdas"]),
            interaction=model["interaction"],
            g=None if filt["g"] is None else float(filt["g"]),
            profile=filt["profile"],
            t_max=None if filt["t_max"] is None else float(filt["t_max"]),
            nodes=int(filt["nodes"]),
            order=order,
            eps_grid=eps_values(neass["eps_grid"]),
            include_zero=bool(neass["include_zero"]),
            probes=int(neass["probes"]),
            perturbation=perturbation,
            fluxes=flux_list,
            conductance_side=int(cond["side"]),
            segments=segments,
            conductance_eps=float(cond["eps"]),
            cs_strength=float(s["chern_simons"]["strength"]),
            gap_samples=int(s["gap_certificate"]["samples"]),
            output_dir=Path(s["outputs"]["directory"]),
            formats=tuple(s["outputs"]["formats"]),
            tolerances=dict(s["tolerances"]),
            seed=int(s["seed"]),
            raw=copy.deepcopy(s),
        )


# === Outputs ===
def _json_default(obj: Any) -> Any:
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.complexfloating, complex)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (Path, Fraction)):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    return path


def write_csv(path: Path, rows: Sequence[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    return path


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Provenance record written next to every command's outputs."""
    command: str
    config_hash: str
    tolerances: Dict[str, float]
    version: str = hallab.__version__
    timings: Dict[str, float] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def add_output(self, path: Path) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def digest(self) -> str:
        """SHA-256 of everything except the wall-clock timings."""
        body = asdict(self)
        body.pop("timings")
        return hashlib.sha256(json.dumps(body, sort_keys=True, default=_json_default).encode("utf-8")).hexdigest()

    def write(self, directory: Path) -> Path:
        body = asdict(self)
        body["digest"] = self.digest()
        path = write_json(Path(directory) / "manifest.json", body)
        logger.info(f"💾 manifest written to {path}")
        return path


if __name__ == "__main__":
    manager = ConfigManager()
    cfg = manager.run_config()
    print("Current configuration:")
    print(json.dumps(manager.state, indent=2, default=_json_default))
    print("-" * 40)
    print("Config hash:", cfg.config_hash())
    print("eps grid:", cfg.scan_eps)
