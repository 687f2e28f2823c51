"""Run configuration and the command jobs shared by the CLI and the service.

A RunConfig is the fully merged parameter set for one command (defaults,
then config file, then explicit flags or request fields).  Jobs turn one
into a JSON-ready envelope embedding the resolved config and the package
version, so an output file alone is enough to rerun the command.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass

from . import validate
from ._version import __version__
from .analytic import (
    analytic_energies,
    correlator_table,
    write_correlator_csv,
    write_energy_csv,
)
from .chain import ChainModel, build_model, ground_state, raw_ground_energy, spectral_gap
from .cooling import OptimizerConfig, minimize_residual
from .errors import ConfigError
from .netsim import SessionLog, parse_scenario, run_session
from .protocol import reference_consumer, reference_supplier, run_qed, run_qet
from .serialize import canonical_json, state_to_doc

COMMANDS = ("analytic", "qet", "qed", "cooling", "netsim", "validate", "dump-state")
FORMATS = ("json", "csv", "text")
DEFAULT_DISTANCES = (5, 10, 20, 40, 60)

_FORMATS_BY_COMMAND = {
    "analytic": ("json", "csv"),
    "validate": ("text", "json"),
}


@dataclass(frozen=True)
class RunConfig:
    """Merged parameters for one command invocation."""

    command: str
    n_sites: int | None = None
    h: float = 1.0
    lam: float | None = None
    j: float | None = None
    boundary: str = "periodic"
    supplier_site: int = 0
    consumer_sites: tuple = ()
    distance: int = 5
    distances: tuple = DEFAULT_DISTANCES
    n_min: int = 0
    n_max: int = 30
    family: str = "unitary"
    grid_points: int = 5
    refine_seeds: int = 3
    f_tol: float = 1e-8
    max_iter: int = 400
    scenario_file: str | None = None
    seed: int | None = None
    only: str | None = None
    tolerances: dict | None = None
    output: str | None = None
    format: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.lam is not None and self.j is not None:
            # Resolved configs carry both; reject only contradictory pairs.
            gap = abs(float(self.j) - float(self.lam) * float(self.h))
            if gap > 1e-12 * max(1.0, abs(float(self.j))):
                raise ConfigError(
                    f"lambda = {self.lam} and J = {self.j} disagree (lambda = J/h, h = {self.h})"
                )
        allowed = _FORMATS_BY_COMMAND.get(self.command, ("json",))
        if self.format is not None and self.format not in allowed:
            raise ConfigError(
                f"format {self.format!r} is not valid for {self.command}; allowed: {allowed}"
            )
        object.__setattr__(self, "consumer_sites", tuple(int(s) for s in self.consumer_sites))
        object.__setattr__(self, "distances", tuple(int(d) for d in self.distances))
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool)):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")

    def resolved(self) -> "RunConfig":
        """Fill the lambda/J pair and the format so the embedded config is complete."""
        h = float(self.h)
        lam, j = self.lam, self.j
        if lam is None and j is None:
            lam = 1.0
        if lam is None:
            lam = float(j) / h
        if j is None:
            j = float(lam) * h
        fmt = self.format
        if fmt is None:
            fmt = _FORMATS_BY_COMMAND.get(self.command, ("json",))[0]
        return dataclasses.replace(self, h=h, lam=float(lam), j=float(j), format=fmt)

    def model(self) -> ChainModel:
        cfg = self.resolved()
        if cfg.n_sites is None:
            raise ConfigError(f"{self.command} needs a chain size (N)")
        return build_model(cfg.n_sites, cfg.h, cfg.j, cfg.boundary)

    def to_doc(self) -> dict:
        doc = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            key = "lambda" if field.name == "lam" else field.name
            doc[key] = list(value) if isinstance(value, tuple) else value
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"config must be a JSON object, got {type(doc).__name__}")
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in doc.items():
            name = "lam" if key == "lambda" else key
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = tuple(value) if isinstance(value, list) else value
        if "command" not in kwargs:
            raise ConfigError("config needs a 'command'")
        return cls(**kwargs)


def merge_config(command: str, file_doc: dict | None, flags: dict) -> RunConfig:
    """Precedence: explicit flags > config file > dataclass defaults."""
    merged = {}
    if file_doc is not None:
        if not isinstance(file_doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_doc.items():
            name = "lam" if key == "lambda" else key
            if name == "command":
                if value != command:
                    raise ConfigError(
                        f"config file is for command {value!r}, not {command!r}"
                    )
                continue
            merged[name] = tuple(value) if isinstance(value, list) else value
    for name, value in flags.items():
        if value is not None:
            merged[name] = value
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(merged) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return RunConfig(command=command, **merged)


def envelope(cfg: RunConfig, result: dict, **extra) -> dict:
    doc = {"version": __version__, "config": cfg.resolved().to_doc(), "result": result}
    doc.update(extra)
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def analytic_tables(cfg: RunConfig):
    cfg = cfg.resolved()
    table = correlator_table(cfg.lam, cfg.n_min, cfg.n_max)
    energies = analytic_energies(cfg.h, cfg.lam, cfg.distances)
    return table, energies


def run_analytic_job(cfg: RunConfig) -> dict:
    table, energies = analytic_tables(cfg)
    return envelope(cfg, {"correlators": table.to_doc(), "energies": energies.to_doc()})


def analytic_csv_texts(cfg: RunConfig) -> dict:
    """Both tables as CSV, each prefixed with version/config comment lines."""
    table, energies = analytic_tables(cfg)
    preamble = f"# qetlab {__version__}\n# config {canonical_json(cfg.resolved().to_doc())}\n"
    out = {}
    buf = io.StringIO()
    write_correlator_csv(table, buf)
    out["correlators"] = preamble + buf.getvalue()
    buf = io.StringIO()
    write_energy_csv(energies, buf)
    out["energies"] = preamble + buf.getvalue()
    return out


def run_qet_job(cfg: RunConfig) -> dict:
    model = cfg.model()
    supplier = reference_supplier(cfg.supplier_site)
    consumer = reference_consumer(cfg.supplier_site + cfg.distance)
    report = run_qet(model, supplier, consumer)
    return envelope(cfg, report.to_doc())


def run_qed_job(cfg: RunConfig) -> dict:
    if not cfg.consumer_sites:
        raise ConfigError("qed needs at least one consumer site (--consumers)")
    model = cfg.model()
    supplier = reference_supplier(cfg.supplier_site)
    consumers = [reference_consumer(s) for s in cfg.consumer_sites]
    report = run_qed(model, supplier, consumers)
    return envelope(cfg, report.to_doc())


def run_cooling_job(cfg: RunConfig) -> dict:
    model = cfg.model()
    opt = OptimizerConfig(
        family=cfg.family,
        grid_points=cfg.grid_points,
        refine_seeds=cfg.refine_seeds,
        f_tol=cfg.f_tol,
        max_iter=cfg.max_iter,
    )
    result = minimize_residual(model, reference_supplier(cfg.supplier_site), opt)
    doc = envelope(cfg, result.to_doc(), converged=result.converged)
    if not result.converged:
        doc["partial"] = True
    return doc


def run_netsim_job(scenario_doc: dict) -> SessionLog:
    kwargs = parse_scenario(scenario_doc)
    return run_session(**kwargs)


def run_validate_job(cfg: RunConfig):
    """Returns (envelope, rendered text, all_passed)."""
    results = validate.run(only=cfg.only, tolerances=cfg.tolerances)
    all_passed = all(r.passed for r in results)
    doc = envelope(
        cfg,
        {"criteria": [r.to_doc() for r in results], "passed": all_passed},
    )
    return doc, validate.render_text(results), all_passed


def run_dump_state_job(cfg: RunConfig) -> dict:
    model = cfg.model()
    state = ground_state(model)
    result = {
        "model": {
            "n_sites": model.n_sites,
            "h": model.h,
            "j": model.j,
            "lambda": model.j / model.h,
            "boundary": model.boundary,
        },
        "e0_raw": raw_ground_energy(model),
        "gap": spectral_gap(model),
        "state": state_to_doc(state),
    }
    return envelope(cfg, result)
