"""Command-line front end.

Thin client over the job layer: every subcommand merges flags over an
optional JSON config file, runs the matching job (in process by default,
against a running service with --server), and writes a deterministic
artifact.  Exit codes: 0 ok, 1 validation failure, 2 usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from ._version import __version__
from .errors import ConfigError, DegenerateProtocolError, NumericalError
from .runconfig import (
    RunConfig,
    analytic_csv_texts,
    dumps,
    merge_config,
    run_analytic_job,
    run_cooling_job,
    run_dump_state_job,
    run_netsim_job,
    run_qed_job,
    run_qet_job,
    run_validate_job,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

_LIST_FLAGS = ("--consumers", "--distances")
_INT_LIST = re.compile(r"-?\d+(,-?\d+)*")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _absorb_negative_lists(argv: list) -> list:
    # argparse reads "-5,5" as an unknown option; fold it into the flag token.
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _LIST_FLAGS and i + 1 < len(argv) and _INT_LIST.fullmatch(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def _add_common(sub: argparse.ArgumentParser, model: bool = True) -> None:
    if model:
        sub.add_argument("--N", dest="n_sites", type=int, help="chain size")
        sub.add_argument("--h", type=float, help="field strength (default 1.0)")
        sub.add_argument("--lambda", dest="lam", type=float, help="coupling ratio J/h in [0, 1]")
        sub.add_argument("--J", dest="j", type=float, help="bond coupling (alternative to --lambda)")
        sub.add_argument("--boundary", choices=("periodic", "open"))
    sub.add_argument("--config", help="JSON config file; flags override its entries")
    sub.add_argument("--output", help="output file (default stdout)")
    sub.add_argument("--server", help="base URL of a running service; run there instead")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qetlab",
        description="Energy teleportation and distribution on transverse-field Ising chains.",
    )
    parser.add_argument("--version", action="version", version=f"qetlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="infinite-chain correlator and energy tables")
    p.add_argument("--lambda", dest="lam", type=float, help="coupling ratio J/h in [0, 1]")
    p.add_argument("--h", type=float, help="field strength (default 1.0)")
    p.add_argument("--nmin", dest="n_min", type=int, help="lowest correlator index")
    p.add_argument("--nmax", dest="n_max", type=int, help="highest correlator index")
    p.add_argument("--distances", type=_int_list, help="consumer distances, e.g. 5,10,20")
    p.add_argument("--format", choices=("json", "csv"))
    _add_common(p, model=False)

    p = sub.add_parser("qet", help="single-consumer run on a finite chain")
    p.add_argument("--d", dest="distance", type=int, help="consumer offset from the supplier")
    p.add_argument("--supplier-site", dest="supplier_site", type=int)
    _add_common(p)

    p = sub.add_parser("qed", help="multi-consumer run on a finite chain")
    p.add_argument("--consumers", dest="consumer_sites", type=_int_list, help="sites, e.g. -5,5")
    p.add_argument("--supplier-site", dest="supplier_site", type=int)
    _add_common(p)

    p = sub.add_parser("cooling", help="minimize the supplier-local energy after measurement")
    p.add_argument("--family", choices=("unitary", "two-element"))
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--refine-seeds", dest="refine_seeds", type=int)
    p.add_argument("--f-tol", dest="f_tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--supplier-site", dest="supplier_site", type=int)
    _add_common(p)

    p = sub.add_parser("netsim", help="run one authenticated distribution session")
    p.add_argument("--scenario", dest="scenario_file", help="scenario JSON file")
    p.add_argument("--seed", type=int, help="overrides the scenario seed")
    _add_common(p, model=False)

    p = sub.add_parser("validate", help="run the acceptance criteria")
    p.add_argument("--only", help="run criteria whose slug or number matches")
    p.add_argument("--tolerances", dest="tolerances_file", help="JSON tolerance overrides")
    p.add_argument("--format", choices=("text", "json"))
    _add_common(p, model=False)

    p = sub.add_parser("dump-state", help="serialize a chain ground state")
    _add_common(p)

    return parser


def _load_json(path: str, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path!r} is not valid JSON: {exc}") from exc


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_scenario(cfg: RunConfig) -> dict:
    if not cfg.scenario_file:
        raise ConfigError("netsim needs a scenario file (--scenario)")
    scenario = _load_json(cfg.scenario_file, "scenario file")
    if cfg.seed is not None and isinstance(scenario, dict):
        scenario["seed"] = cfg.seed
    return scenario


_CONFIG_FLAGS = {
    "analytic": ("lam", "h", "n_min", "n_max", "distances", "format", "output"),
    "qet": ("n_sites", "h", "lam", "j", "boundary", "distance", "supplier_site", "output"),
    "qed": ("n_sites", "h", "lam", "j", "boundary", "consumer_sites", "supplier_site", "output"),
    "cooling": (
        "n_sites", "h", "lam", "j", "boundary", "family", "grid_points",
        "refine_seeds", "f_tol", "max_iter", "supplier_site", "output",
    ),
    "netsim": ("scenario_file", "seed", "output"),
    "validate": ("only", "format", "output"),
    "dump-state": ("n_sites", "h", "lam", "j", "boundary", "output"),
}


def _build_config(args: argparse.Namespace) -> RunConfig:
    file_doc = _load_json(args.config, "config file") if args.config else None
    flags = {name: getattr(args, name, None) for name in _CONFIG_FLAGS[args.command]}
    if args.command == "validate" and args.tolerances_file:
        flags["tolerances"] = _load_json(args.tolerances_file, "tolerance file")
    return merge_config(args.command, file_doc, flags)


def _run_local(cfg: RunConfig) -> int:
    command = cfg.command
    if command == "analytic":
        if cfg.resolved().format == "csv":
            texts = analytic_csv_texts(cfg)
            if cfg.output:
                base = cfg.output[:-4] if cfg.output.endswith(".csv") else cfg.output
                Path(f"{base}.correlators.csv").write_text(texts["correlators"])
                Path(f"{base}.energies.csv").write_text(texts["energies"])
            else:
                sys.stdout.write(texts["correlators"] + "\n" + texts["energies"])
        else:
            _write(cfg.output, dumps(run_analytic_job(cfg)))
        return EXIT_OK
    if command == "qet":
        _write(cfg.output, dumps(run_qet_job(cfg)))
        return EXIT_OK
    if command == "qed":
        _write(cfg.output, dumps(run_qed_job(cfg)))
        return EXIT_OK
    if command == "cooling":
        doc = run_cooling_job(cfg)
        _write(cfg.output, dumps(doc))
        if not doc["converged"]:
            print("optimizer did not converge; output flagged as partial", file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    if command == "netsim":
        log = run_netsim_job(_load_scenario(cfg))
        _write(cfg.output, log.to_json_lines())
        return EXIT_OK
    if command == "validate":
        doc, text, all_passed = run_validate_job(cfg)
        if cfg.resolved().format == "json":
            _write(cfg.output, dumps(doc))
        else:
            _write(cfg.output, text)
        return EXIT_OK if all_passed else EXIT_VALIDATION
    if command == "dump-state":
        _write(cfg.output, dumps(run_dump_state_job(cfg)))
        return EXIT_OK
    raise ConfigError(f"unknown command {command!r}")


def _run_remote(cfg: RunConfig, server: str) -> int:
    import httpx

    command = cfg.command
    path = f"/{command}"
    if command == "netsim":
        payload = {"scenario": _load_scenario(cfg)}
    else:
        payload = {"config": cfg.to_doc()}
    response = httpx.post(server.rstrip("/") + path, json=payload, timeout=600.0)
    if response.status_code >= 400:
        try:
            detail = response.json()
        except ValueError:
            detail = {"detail": response.text}
        print(f"error: {detail.get('detail', detail)}", file=sys.stderr)
        if response.status_code == 500 and detail.get("kind") == "numerical":
            return EXIT_NUMERICAL
        return EXIT_USAGE
    body = response.json()
    if command == "netsim":
        _write(cfg.output, body["jsonl"])
        return EXIT_OK
    if command == "analytic" and cfg.resolved().format == "csv":
        if cfg.output:
            base = cfg.output[:-4] if cfg.output.endswith(".csv") else cfg.output
            Path(f"{base}.correlators.csv").write_text(body["csv"]["correlators"])
            Path(f"{base}.energies.csv").write_text(body["csv"]["energies"])
        else:
            sys.stdout.write(body["csv"]["correlators"] + "\n" + body["csv"]["energies"])
        return EXIT_OK
    if command == "validate":
        if cfg.resolved().format == "json":
            _write(cfg.output, dumps({k: body[k] for k in ("version", "config", "result")}))
        else:
            _write(cfg.output, body["text"])
        return EXIT_OK if body["result"]["passed"] else EXIT_VALIDATION
    if command == "cooling":
        keys = ("version", "config", "result", "converged") + (
            ("partial",) if body.get("partial") else ()
        )
        _write(cfg.output, dumps({k: body[k] for k in keys}))
        if not body["converged"]:
            print("optimizer did not converge; output flagged as partial", file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    _write(cfg.output, dumps({k: body[k] for k in ("version", "config", "result")}))
    return EXIT_OK


def main(argv=None) -> int:
    raw = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_absorb_negative_lists(raw))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _build_config(args)
        if args.server:
            return _run_remote(cfg, args.server)
        return _run_local(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateProtocolError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
