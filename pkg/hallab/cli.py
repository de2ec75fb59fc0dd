# hallab/cli.py

"""
Command-line frontend.

Every command reads the JSON run configuration (see config_manager), runs its
stages, writes CSV tables and a JSON summary into the output directory and
finishes with manifest.json. Package errors are turned into error.json plus
a non-zero exit code.
"""

from __future__ import annotations

import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
import numpy as np
from tqdm import tqdm

from hallab.config_manager import ConfigManager, RunConfig, RunManifest, write_csv, write_json
from hallab.exceptions import ConfigError, FluxQuantizationError, HallabError
from hallab.fock import Sector, State, flux_quantized
from hallab.hofstadter import (
    OneBodyModel,
    SpectralCache,
    band_edges,
    fermi_projection,
    flux_fraction,
    gap_certificate,
    ground_state,
    kspace_chern_number,
    kubo_chern,
    local_chern_marker,
    many_body_hamiltonian,
    mu_in_gap,
    one_body_chern,
    one_body_hamiltonian,
    spectral_cache,
)
from hallab.interactions import Interaction, interaction_from_records, number_interaction
from hallab.matrix_cache import MatrixCache
from hallab.neass import neass_generators, neass_probes, neass_scan
from hallab.response import (
    chern_simons_check,
    conductance_stats,
    current_interaction,
    hall_conductivity,
    profile_spread,
    random_periodic_generator,
    response_scan,
)
from hallab.selftest import run_selftest
from hallab.spectral_flow import FilterKernel
from hallab.utils.log import get_logger, set_quiet
from hallab.utils.settings import CACHE_DIR, WORKER_COUNT

logger = get_logger(__name__)


class CommandError(click.ClickException):
    exit_code = 2


# === Session ===
class Session:
    """
    Per-invocation state: configuration, output directory, seed, timings and
    the manifest of written files.
    """

    def __init__(self, config_path: Optional[Path], out_dir: Optional[Path], threads: int,
                 seed: Optional[int], quiet: bool):
        self.config_path = config_path
        self.out_override = out_dir
        self.threads = threads
        self.seed_override = seed
        self.quiet = quiet
        self.command = ""
        self._cfg: Optional[RunConfig] = None
        self.manifest: Optional[RunManifest] = None
        self.matrix_cache = MatrixCache(CACHE_DIR)

    @property
    def cfg(self) -> RunConfig:
        if self._cfg is None:
            manager = ConfigManager(self.config_path)
            if self.seed_override is not None:
                manager.set("seed", self.seed_override)
            self._cfg = manager.run_config()
        return self._cfg

    @property
    def out(self) -> Path:
        if self.out_override is not None:
            return self.out_override
        try:
            return self.cfg.output_dir / self.command
        except HallabError:
            return Path("results") / self.command

    @property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.cfg.seed)

    def progress(self, iterable, **kwargs):
        return tqdm(iterable, disable=self.quiet or not sys.stderr.isatty(), **kwargs)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        yield
        self.manifest.timings[name] = round(time.perf_counter() - start, 6)

    def begin(self, command: str) -> None:
        self.command = command
        self.manifest = RunManifest(command, self.cfg.config_hash(), dict(self.cfg.tolerances))

    def write_rows(self, name: str, rows: Sequence[Dict[str, Any]]) -> None:
        if "csv" in self.cfg.formats:
            self.manifest.add_output(write_csv(self.out / name, rows))

    def write_summary(self, name: str, data: Dict[str, Any]) -> None:
        if "json" in self.cfg.formats:
            self.manifest.add_output(write_json(self.out / name, data))

    def fail(self, error: HallabError) -> None:
        record = {"error": type(error).__name__, "message": str(error), "context": error.context}
        path = write_json(self.out / "error.json", record)
        logger.error(f"❌ {self.command}: {error} (details in {path})")

    def finish(self) -> None:
        self.manifest.write(self.out)


def run_command(ctx: click.Context, name: str, body: Callable[[Session], None]) -> None:
    session: Session = ctx.obj
    session.command = name
    try:
        session.begin(name)
        body(session)
        session.finish()
    except HallabError as e:
        session.fail(e)
        raise CommandError(f"{type(e).__name__}: {e}")


# === Shared setup ===
@dataclass
class ManyBody:
    lam: float
    mu: float
    H: Interaction
    cache: SpectralCache
    omega0: State
    kernel: FilterKernel
    model: OneBodyModel


def resolve_mu(cfg: RunConfig, L: Optional[int] = None, b: Optional[float] = None) -> float:
    L = cfg.L if L is None else L
    b = cfg.b if b is None else b
    return mu_in_gap(b, L) if cfg.mu == "auto" else float(cfg.mu)


def make_kernel(cfg: RunConfig, gap: float) -> FilterKernel:
    g = cfg.g if cfg.g is not None else 0.9 * gap
    if not math.isfinite(g):
        g = 1.0
    return FilterKernel(g, cfg.profile, cfg.t_max, cfg.nodes)


def many_body_setup(session: Session, lam: Optional[float] = None) -> ManyBody:
    cfg = session.cfg
    cfg.require_many_body()
    if not cfg.pbc:
        raise ConfigError("many-body commands need magnetic periodic boundary conditions")
    lam = cfg.lam if lam is None else lam
    mu = resolve_mu(cfg)
    H, Hm = many_body_hamiltonian(cfg.b, mu, lam, cfg.L, V=cfg.interaction)
    omega0, cache = ground_state(Hm, session.matrix_cache)
    logger.info(f"🔍 ground energy {cache.ground_energy:.10g}, gap {cache.gap:.6g}, degeneracy {cache.degeneracy}")
    model = one_body_hamiltonian(cfg.b, cfg.L, mu)
    return ManyBody(lam, mu, H, cache, omega0, make_kernel(cfg, cache.gap), model)


# === CLI group ===
@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="JSON run configuration (defaults apply to missing keys).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory (default: <outputs.directory>/<command>).")
@click.option("--threads", type=click.IntRange(min=1), default=WORKER_COUNT, show_default=True)
@click.option("--seed", type=int, default=None, help="Overrides the configured seed.")
@click.option("--quiet", is_flag=True, help="Only warnings and errors, no progress bars.")
@click.pass_context
def cli(ctx: click.Context, config_path, out_dir, threads, seed, quiet):
    """Hall response laboratory on finite magnetic tori."""
    if quiet:
        set_quiet()
    ctx.obj = Session(config_path, out_dir, threads, seed, quiet)


@cli.command()
@click.pass_context
def spectrum(ctx):
    """One-body spectrum for every configured flux (butterfly scan)."""

    def body(s: Session):
        cfg = s.cfg

        def one(frac) -> List[Dict[str, Any]]:
            b = 2 * math.pi * float(frac)
            if cfg.pbc and not flux_quantized(b, cfg.L):
                raise FluxQuantizationError(f"flux {frac} is not quantized on L={cfg.L}",
                                            {"b": b, "L": cfg.L})
            model = one_body_hamiltonian(b, cfg.L, 0.0, magnetic_pbc=cfg.pbc)
            return [{"flux": str(frac), "b": b, "index": i, "eigenvalue": float(e)}
                    for i, e in enumerate(model.spectrum)]

        with s.stage("spectrum"), ThreadPoolExecutor(max_workers=s.threads) as pool:
            tables = list(s.progress(pool.map(one, cfg.fluxes), total=len(cfg.fluxes), desc="fluxes"))
        rows = [r for t in tables for r in t]
        s.write_rows("spectrum.csv", rows)
        s.write_summary("spectrum.json", {"L": cfg.L, "fluxes": [str(f) for f in cfg.fluxes], "rows": len(rows)})

    run_command(ctx, "spectrum", body)


@cli.command("gap-map")
@click.pass_context
def gap_map(ctx):
    """Spectral gaps of every admissible flux p/q (q | L) with their Chern labels."""

    def body(s: Session):
        cfg = s.cfg
        rows = []
        with s.stage("gap-map"):
            for frac in s.progress(cfg.fluxes, desc="fluxes"):
                if cfg.L % frac.denominator:
                    logger.warning(f"⚠️ skipping flux {frac}: denominator does not divide L={cfg.L}")
                    continue
                b = 2 * math.pi * float(frac)
                model = one_body_hamiltonian(b, cfg.L)
                for lower, upper in band_edges(model):
                    mu = 0.5 * (lower + upper)
                    rows.append({
                        "flux": str(frac), "b": b, "gap_lower": lower, "gap_upper": upper,
                        "filled": int(np.sum(model.spectrum < mu)),
                        "chern": kspace_chern_number(model.with_mu(mu)),
                    })
        s.write_rows("gap_map.csv", rows)
        s.write_summary("gap_map.json", {"L": cfg.L, "gaps": len(rows)})

    run_command(ctx, "gap-map", body)


@cli.command()
@click.pass_context
def chern(ctx):
    """One-body Chern oracles at the configured flux and Fermi level."""

    def body(s: Session):
        cfg = s.cfg
        mu = resolve_mu(cfg)
        model = one_body_hamiltonian(cfg.b, cfg.L, mu, magnetic_pbc=cfg.pbc)
        with s.stage("chern"):
            P = fermi_projection(model)
            summary: Dict[str, Any] = {
                "L": cfg.L, "b": cfg.b, "mu": mu, "filling": model.filling,
                "double_commutator": one_body_chern(P, model=model),
                "double_commutator_spectral": one_body_chern(P, model=model, position="spectral"),
                "kubo": kubo_chern(model),
            }
            marker = local_chern_marker(model, P)
            summary["marker_mean"] = float(marker.mean())
            if cfg.pbc and cfg.L % flux_fraction(cfg.b, cfg.L).denominator == 0:
                c = kspace_chern_number(model)
                summary["chern_number"] = c
                summary["chern_over_2pi"] = c / (2 * math.pi)
        s.write_rows("marker.csv", [{"x1": i, "x2": j, "marker": float(marker[i, j])}
                                    for i in range(cfg.L) for j in range(cfg.L)])
        s.write_summary("chern.json", summary)

    run_command(ctx, "chern", body)


@cli.command()
@click.option("--lambdas", "lambdas", type=float, multiple=True,
              help="Extra couplings for the continuity scan (adds to model.lambdas).")
@click.option("--profiles/--no-profiles", default=True, show_default=True,
              help="Repeat sigma_H with both inside-gap profiles.")
@click.pass_context
def sigma(ctx, lambdas, profiles):
    """Many-body Hall conductivity with one-body oracles and a coupling scan."""

    def body(s: Session):
        cfg = s.cfg
        with s.stage("ground_state"):
            mb = many_body_setup(s)
        with s.stage("sigma"):
            value = hall_conductivity(mb.omega0, mb.H, mb.cache, mb.kernel)
            P = fermi_projection(mb.model)
            one_body = one_body_chern(P, model=mb.model, position="spectral")
            infinite_volume = one_body_chern(P, model=mb.model)
        summary: Dict[str, Any] = {
            "L": cfg.L, "b": cfg.b, "mu": mb.mu, "lambda": mb.lam, "g": mb.kernel.g,
            "gap": mb.cache.gap, "sigma_H": value, "one_body_double_commutator": one_body,
            "one_body_twist_averaged": infinite_volume,
            "quasi_free_deviation": abs(value - one_body) if mb.lam == 0.0 else None,
        }
        if profiles:
            with s.stage("profiles"):
                summary["profiles"] = profile_spread(mb.omega0, mb.H, mb.cache, mb.kernel,
                                                     tolerance=cfg.tolerance("profile"))
        scan = sorted(set(cfg.lambdas) | set(lambdas))
        rows = [{"lambda": mb.lam, "sigma_H": value, "gap": mb.cache.gap}]
        with s.stage("lambda_scan"):
            for lam in s.progress(scan, desc="lambda"):
                if lam == mb.lam:
                    continue
                other = many_body_setup(s, lam)
                rows.append({"lambda": lam, "sigma_H": hall_conductivity(other.omega0, other.H, other.cache,
                                                                         other.kernel),
                             "gap": other.cache.gap})
        rows.sort(key=lambda r: r["lambda"])
        if len(rows) > 1 and value != 0.0:
            summary["max_relative_drift"] = max(abs(r["sigma_H"] - value) / abs(value) for r in rows)
        s.write_rows("sigma_lambda.csv", rows)
        s.write_summary("sigma.json", summary)

    run_command(ctx, "sigma", body)


@cli.command("ed-ground")
@click.option("--particles", type=int, default=None, help="Restrict to a fixed particle number.")
@click.pass_context
def ed_ground(ctx, particles):
    """Many-body ground energy, degeneracy, gap and gap certificate."""

    def body(s: Session):
        cfg = s.cfg
        cfg.require_many_body()
        mu = resolve_mu(cfg)
        H, Hm = many_body_hamiltonian(cfg.b, mu, cfg.lam, cfg.L, V=cfg.interaction)
        with s.stage("diagonalize"):
            if particles is None:
                state, cache = ground_state(Hm, s.matrix_cache)
            else:
                sector = Sector(H.n_modes, particles)
                cache = spectral_cache(sector.restrict(Hm), s.matrix_cache)
                if cache.degenerate:
                    basis = np.array([sector.embed(cache.eigenvectors[:, k]) for k in range(cache.degeneracy)]).T
                    state = State.projector(basis @ basis.conj().T)
                else:
                    state = State.vector(sector.embed(cache.eigenvectors[:, 0]))
        free_gap = one_body_hamiltonian(cfg.b, cfg.L, mu).gap
        threshold = free_gap if cfg.lam == 0.0 else 0.5 * free_gap
        with s.stage("gap_certificate"):
            report = gap_certificate(state, H, threshold, cfg.gap_samples, s.rng,
                                     slack=cfg.tolerance("gap_slack"), variance_floor=cfg.tolerance("variance"))
        s.write_rows("ed_levels.csv", [{"index": i, "energy": float(e)}
                                       for i, e in enumerate(cache.eigenvalues[:32])])
        s.write_summary("ed_ground.json", {
            "L": cfg.L, "mu": mu, "lambda": cfg.lam, "particles": particles,
            "ground_energy": cache.ground_energy, "degeneracy": cache.degeneracy, "gap": cache.gap,
            "one_body_gap": free_gap, "certificate": report.to_dict(),
        })

    run_command(ctx, "ed-ground", body)


@cli.command("neass-scan")
@click.option("--order", type=int, default=None, help="Overrides neass.order.")
@click.option("--profiles/--no-profiles", default=False, show_default=True,
              help="Repeat the scan with the second inside-gap profile.")
@click.pass_context
def neass_scan_cmd(ctx, order, profiles):
    """NEASS generators, stationarity residuals and current response over the eps grid."""

    def body(s: Session):
        cfg = s.cfg
        m = cfg.order if order is None else order
        with s.stage("ground_state"):
            mb = many_body_setup(s)
        kernels = [mb.kernel] + ([replace(mb.kernel, profile="quintic" if mb.kernel.profile == "poly" else "poly")]
                                 if profiles else [])
        V = (interaction_from_records(mb.H.lattice, cfg.perturbation, mb.H.translation)
             if cfg.perturbation is not None else None)
        summary: Dict[str, Any] = {"L": cfg.L, "lambda": mb.lam, "order": m, "g": mb.kernel.g,
                                   "perturbation": V is not None}
        rows: List[Dict[str, Any]] = []
        for kernel in kernels:
            with s.stage(f"generators_{kernel.profile}"):
                gens = neass_generators(mb.H, V, m, kernel, cache=mb.cache, tolerance=cfg.tolerance("identity"))
                probes = neass_probes(gens, cfg.probes, s.rng)
            with s.stage(f"scan_{kernel.profile}"):
                report = neass_scan(mb.omega0, gens, cfg.scan_eps, probes, s.threads,
                                    tolerance=cfg.tolerance("flow"))
                sig = hall_conductivity(mb.omega0, mb.H, mb.cache, kernel)
                response = response_scan(mb.omega0, gens, cfg.scan_eps, sig, s.threads,
                                         noise_floor=cfg.tolerance("current"))
            summary[kernel.profile] = {"neass": report.to_dict(), "response": response.to_dict()}
            for a, b in zip(report.rows(), response.rows()):
                rows.append({"profile": kernel.profile, **a, **{k: v for k, v in b.items() if k != "eps"}})
        if profiles:
            first, second = (summary[k.profile] for k in kernels)
            summary["profile_spread"] = {
                "sigma_H": abs(first["response"]["sigma_H"] - second["response"]["sigma_H"]),
                "residual_slope": abs(first["neass"]["slope"] - second["neass"]["slope"]),
            }
        s.write_rows("neass.csv", rows)
        s.write_summary("neass.json", summary)

    run_command(ctx, "neass-scan", body)


@cli.command("cs-check")
@click.option("--strength", type=float, default=None, help="Overrides chern_simons.strength.")
@click.pass_context
def cs_check(ctx, strength):
    """sigma_H before and after locally generated automorphisms."""

    def body(s: Session):
        cfg = s.cfg
        st = cfg.cs_strength if strength is None else strength
        with s.stage("ground_state"):
            mb = many_body_setup(s)
        with s.stage("cs_check"):
            tol = cfg.tolerance("chern_simons")
            rnd = chern_simons_check(mb.omega0, mb.H, mb.cache, mb.kernel,
                                     random_periodic_generator(mb.H, s.rng), st, tolerance=tol)
            num = chern_simons_check(mb.omega0, mb.H, mb.cache, mb.kernel,
                                     number_interaction(mb.H.lattice, mb.H.translation), st, tolerance=tol)
        rows = [{"generator": "random", **rnd.to_dict()}, {"generator": "number", **num.to_dict()}]
        s.write_rows("cs_check.csv", rows)
        s.write_summary("cs_check.json", {"L": cfg.L, "lambda": mb.lam, "random": rnd.to_dict(),
                                          "number": num.to_dict()})

    run_command(ctx, "cs-check", body)


@cli.command("conductance-var")
@click.pass_context
def conductance_var(ctx):
    """Segment conductance statistics: Wick path on a large torus, ED cross-check on the small one."""

    def body(s: Session):
        cfg = s.cfg
        side = cfg.conductance_side
        b = 2 * math.pi * float(cfg.flux) if cfg.flux is not None else cfg.b
        if not flux_quantized(b, side):
            raise FluxQuantizationError(f"flux b={b:.6g} is not quantized on side {side}", {"b": b, "L": side})
        model = one_body_hamiltonian(b, side, resolve_mu(cfg, side, b))
        rows = []
        with s.stage("wick"):
            gamma = State.quasi_free(fermi_projection(model))
            for seg in s.progress(cfg.segments, desc="segments"):
                rows.append(conductance_stats(gamma, cfg.conductance_eps, seg, model=model).to_dict())
        summary: Dict[str, Any] = {"side": side, "eps": cfg.conductance_eps, "segments": rows}
        scaled = [r["scaled_variance"] for r in rows if r["scaled_variance"] > 0]
        if scaled:
            summary["scaled_variance_ratio"] = max(scaled) / min(scaled)
        if cfg.L * cfg.L <= 12 and cfg.lam == 0.0 and cfg.pbc:
            with s.stage("ed_vs_wick"):
                mb = many_body_setup(s)
                J = current_interaction(mb.H, None, cfg.conductance_eps, 2)
                ed = conductance_stats(mb.omega0, cfg.conductance_eps, cfg.L, current=J)
                small = one_body_hamiltonian(cfg.b, cfg.L, mb.mu)
                wick = conductance_stats(State.quasi_free(fermi_projection(small)), cfg.conductance_eps, cfg.L,
                                         model=small)
            summary["ed_vs_wick"] = {"ed_variance": ed.variance, "wick_variance": wick.variance,
                                     "difference": abs(ed.variance - wick.variance)}
        s.write_rows("conductance.csv", rows)
        s.write_summary("conductance.json", summary)

    run_command(ctx, "conductance-var", body)


@cli.command()
@click.pass_context
def selftest(ctx):
    """In-process property suite with a deterministic report."""

    def body(s: Session):
        with s.stage("selftest"):
            report = run_selftest(s.cfg.seed, s.cfg.tolerances)
        s.write_summary("selftest.json", report)
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        if failed:
            raise HallabError(f"{len(failed)} selftest checks failed", {"failed": failed})
        logger.info(f"✅ selftest passed ({len(report['checks'])} checks)")

    run_command(ctx, "selftest", body)


def main() -> None:
    cli(prog_name="hallab")


if __name__ == "__main__":
    main()
