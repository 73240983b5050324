"""``chiralbag`` command line: one subcommand per verification or computation workflow.

Every run writes a JSON report (``schema: 1``) that embeds the resolved
configuration.  Parameters come from built-in defaults, then an optional
config file, then explicit flags.  Exit codes: 0 all verdicts pass, 1 some
verdict fails, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("chiralbag")


class UsageError(Exception):
    """Invalid configuration; reported with exit code 2."""


# ------------------------------------------------------------------ parameter parsing


def _float_list(text: str | list | float) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text: str | list | int) -> list[int]:
    return [int(v) for v in _float_list(text)]


def _str_list(text: str | list) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _chart_list(text: str | list) -> list[str]:
    """Comma list of chart names; ``key=value`` pieces stay with the preceding ``synthetic:`` entry."""
    out: list[str] = []
    for piece in _str_list(text):
        if "=" in piece and ":" not in piece and out:
            out[-1] += "," + piece
        else:
            out.append(piece)
    return out


def _sign(text: str | int) -> int:
    s = str(text).strip().lower()
    if s in ("-1", "-", "minus"):
        return -1
    if s in ("1", "+1", "+", "plus"):
        return 1
    raise ValueError(f"expected plus/minus, got {text!r}")


def _sign_or_both(text: str | int) -> str | int:
    return "both" if str(text).strip().lower() == "both" else _sign(text)


def _optional_float(text: str | float | None) -> float | None:
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return float(text)


def _optional_str(text: str | None) -> str | None:
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return str(text)


@dataclass(frozen=True)
class Param:
    parse: Callable[[Any], Any]
    default: Any
    help: str
    choices: tuple | None = None


COMMON_SPECTRAL = {
    "method": Param(str, "auto", "eigensolver", ("auto", "dense", "shift-invert", "lobpcg")),
    "wilson_term": Param(float, 0.0, "accepted for config compatibility; must be 0"),
}

SCHEMAS: dict[str, dict[str, Param]] = {
    "verify-clifford": {
        "n": Param(_int_list, [2, 3, 4, 5, 6], "dimensions (comma list)"),
        "tol": Param(float, 1e-12, "relation tolerance"),
    },
    "verify-killing": {
        "n": Param(_int_list, [2, 3], "dimensions (comma list)"),
        "sign": Param(_sign_or_both, "both", "plus, minus or both"),
        "h": Param(float, 1e-3, "finite-difference step"),
    },
    "expand-check": {
        "chart": Param(_chart_list, ["hemisphere", "synthetic:a=0.1,b=0.2,c=0.2", "graph:1.0"],
                       "charts: flat, hemisphere, graph:<kappa>, synthetic[:a=..,b=..,c=..]"),
        "n": Param(int, 3, "dimension for flat/hemisphere/synthetic charts"),
        "radius": Param(float, 1e-2, "stencil radius of the Taylor fits"),
        "points": Param(int, 10, "random points for the identity check"),
        "h": Param(float, 1e-3, "finite-difference step of the identity check"),
        "seed": Param(int, 0, "seed of the random points"),
        "tol": Param(float, 1e-6, "coefficient tolerance"),
    },
    "spectrum": {
        "n": Param(int, 2, "dimension"),
        "model": Param(str, "hemisphere", "conformal model", ("flat", "hemisphere", "perturbed")),
        "grid": Param(str, "halfball", "grid shape", ("halfball", "ball")),
        "h": Param(_float_list, [0.05], "grid spacing (comma list gives an h-table)"),
        "rmax": Param(float, 6.0, "truncation radius"),
        "sign": Param(_sign, -1, "chiral bag sign"),
        "k": Param(int, 4, "eigenvalues to report"),
        "budget": Param(_optional_float, None, "relative tolerance for the hemisphere targets (auto: 3% n=2, 5% n=3)"),
        "export_coo": Param(_optional_str, None, "write the reduced energy matrix of the first run here"),
        **COMMON_SPECTRAL,
    },
    "scan": {
        "n": Param(int, 2, "dimension"),
        "delta": Param(float, 0.5, "cutoff radius"),
        "eps": Param(lambda v: None if _optional_str(v) is None else _float_list(v), None,
                     "decreasing bubble scales (default: delta/4 halved five times)"),
        "resolution": Param(int, 200, "adaptive subinterval limit per radial integral"),
        "budget": Param(float, 0.02, "relative tolerance of the extrapolated limit"),
    },
    "hijazi": {
        "n": Param(int, 3, "dimension"),
        "h": Param(float, 0.2, "grid spacing"),
        "rmax": Param(float, 4.0, "truncation radius"),
        "models": Param(_str_list, ["hemisphere", "perturbed"], "models; hemisphere is the equality case"),
        "budget": Param(float, 0.05, "relative tolerance of the equality case"),
        **COMMON_SPECTRAL,
    },
    "surface2d": {
        "eps": Param(_float_list, [0.2, 0.1, 0.05], "decreasing bubble scales"),
        "alpha": Param(float, 2.0, "radius where the factor freezes"),
        "delta": Param(float, 8.0, "cutoff radius (model half-disk of radius 2 delta)"),
        "budget": Param(float, 0.10, "allowed excess of the product over sqrt(2 pi)"),
        "volume_budget": Param(float, 0.05, "relative tolerance of the volume"),
    },
    "symmetry": {
        "n": Param(int, 2, "dimension"),
        "model": Param(str, "flat", "conformal model", ("flat", "hemisphere", "perturbed")),
        "grid": Param(str, "halfball", "grid shape", ("halfball", "ball")),
        "h": Param(float, 0.1, "grid spacing"),
        "rmax": Param(float, 2.0, "truncation radius"),
        "k": Param(int, 4, "eigenvalues to pair"),
        "tol": Param(float, 1e-8, "pairing tolerance"),
        **COMMON_SPECTRAL,
    },
}

ALIASES = {"r_max": "rmax", "R_max": "rmax", "export-coo": "export_coo", "wilson-term": "wilson_term",
           "volume-budget": "volume_budget"}


def _normalize_key(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key)
    return ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))


def read_config(path: str | Path) -> dict[str, Any]:
    """JSON when the suffix is ``.json``; otherwise ``key = value`` lines with ``#`` comments."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        return data
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split(sep, 1)
        out[key.strip()] = value.strip()
    return out


def resolve_params(command: str, file_values: dict[str, Any], flag_values: dict[str, Any]) -> dict[str, Any]:
    """Defaults, then config file, then flags; every value is validated against the schema."""
    schema = SCHEMAS[command]
    merged: dict[str, Any] = {}
    for source in (file_values, flag_values):
        for raw_key, value in source.items():
            key = _normalize_key(raw_key)
            if key == "command":
                if value != command:
                    raise UsageError(f"config is for command {value!r}, not {command!r}")
                continue
            if key not in schema:
                raise UsageError(f"unknown key {raw_key!r} for command {command!r}")
            merged[key] = value
    params = {}
    for key, spec in schema.items():
        if key not in merged:
            params[key] = spec.default
            continue
        try:
            value = spec.parse(merged[key])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {key!r}: {merged[key]!r} ({exc})") from exc
        if spec.choices and value not in spec.choices:
            raise UsageError(f"invalid value for {key!r}: {value!r}; choose from {list(spec.choices)}")
        params[key] = value
    if params.get("wilson_term", 0.0) != 0.0:
        raise UsageError("key 'wilson_term' must be 0: the energy-form discretization has no doublers")
    return params


# ------------------------------------------------------------------------ commands


def run_verify_clifford(p: dict) -> dict:
    from .clifford import admissible_basis, build_rep, chiral_projector, verify_relations

    rows = []
    for n in p["n"]:
        rep = build_rep(n)
        rel = verify_relations(rep, tol=p["tol"])
        nu = np.zeros(n)
        nu[-1] = -1.0
        bc = {}
        for s in (-1, 1):
            B = admissible_basis(rep, nu, s)
            P = chiral_projector(rep, nu, s).matrix
            bc[f"sign{s:+d}"] = {
                "rank": int(B.shape[1]),
                "kernel_residual": float(np.abs(P @ B).max()),
                "orthonormality": float(np.abs(B.conj().T @ B - np.eye(B.shape[1])).max()),
            }
        ok = rel["pass"] and all(
            v["rank"] == rep.d // 2 and v["kernel_residual"] < p["tol"] and v["orthonormality"] < p["tol"] for v in bc.values()
        )
        rows.append({**rel, "boundary": bc, "pass": bool(ok)})
    return {"runs": rows, "verdicts": {f"n={r['n']}": r["pass"] for r in rows}}


def run_verify_killing(p: dict) -> dict:
    from .clifford import build_rep
    from .fields import verify_killing

    rows, verdicts = [], {}
    signs = [1, -1] if p["sign"] == "both" else [p["sign"]]
    for n in p["n"]:
        rep = build_rep(n)
        for s in signs:
            r = verify_killing(rep, s, h=p["h"])
            r.update({"n": n, "sign": s})
            rows.append(r)
            for key, ok in r["verdicts"].items():
                verdicts[f"n={n},sign={s:+d},{key}"] = ok
    return {"runs": rows, "verdicts": verdicts}


def run_expand_check(p: dict) -> dict:
    from .clifford import build_rep
    from .fields import killing_field
    from .geometry import (
        b_expansion_check,
        chart_from_name,
        codazzi_check,
        devdir_identity_check,
        metric_expansion_coeffs,
        order_estimate_scan,
        random_interior_points,
    )

    rows, verdicts = [], {}
    for name in p["chart"]:
        chart = chart_from_name(name, p["n"])
        rep = build_rep(chart.n)
        coeffs = metric_expansion_coeffs(chart, radius=p["radius"])
        bcheck = b_expansion_check(chart, radius=p["radius"], tol=p["tol"])
        scan = order_estimate_scan(chart)
        cod = codazzi_check(chart, tol=p["tol"])
        field_ = killing_field(rep, 1)
        pts = random_interior_points(chart, count=p["points"], seed=p["seed"])
        ident = [devdir_identity_check(chart, rep, field_, q, h=p["h"]) for q in pts]
        row = {
            "chart": chart.name,
            "n": chart.n,
            "metric_expansion": coeffs,
            "b_expansion": bcheck,
            "order_scan": scan,
            "codazzi": cod,
            "identity": {"points": pts.tolist(), "residuals": ident, "max": max(ident), "tol": 1e-4},
        }
        rows.append(row)
        verdicts[f"{chart.name}:coefficients"] = bool(coeffs["max_error"] < p["tol"])
        verdicts[f"{chart.name}:b_expansion"] = bcheck["pass"]
        verdicts[f"{chart.name}:orders"] = scan["pass"]
        verdicts[f"{chart.name}:codazzi"] = cod["pass"]
        verdicts[f"{chart.name}:identity"] = bool(max(ident) < 1e-4)
    return {"runs": rows, "verdicts": verdicts}


def run_spectrum(p: dict) -> dict:
    from .clifford import build_rep
    from .dirac_disc import apply_chiral_bc, assemble_model, ball_grid, export_coo, halfball_grid
    from .spectral import dirac_eigs, discrete_volume, sphere_constant

    n = p["n"]
    rep = build_rep(n)
    budget = p["budget"] if p["budget"] is not None else (0.03 if n == 2 else 0.05)
    make = halfball_grid if p["grid"] == "halfball" else ball_grid
    rows, verdicts = [], {}
    for i, h in enumerate(p["h"]):
        grid = make(n, h, p["rmax"])
        mat = apply_chiral_bc(assemble_model(rep, grid, p["model"]), rep, p["sign"])
        if i == 0 and p["export_coo"]:
            export_coo(mat.reduced_energy(), p["export_coo"])
        res = dirac_eigs(mat, k=p["k"], method=p["method"], keep_vectors=False)
        lam1 = float(abs(res.eigenvalues[0]))
        vol = discrete_volume(mat)
        row = {
            "n": n,
            "h": h,
            "R_max": p["rmax"],
            "model": p["model"],
            "sign": p["sign"],
            "grid": grid.summary(),
            "spectrum": res.to_dict(),
            "lambda1": lam1,
            "volume": vol,
            "product": lam1 * vol ** (1 / n),
            "symmetrization_norm": mat.symmetrization_norm,
        }
        verdicts[f"h={h:g}:converged"] = bool(res.meta.get("converged", True))
        if p["model"] == "hemisphere" and p["grid"] == "halfball":
            row["lambda1_target"] = n / 2
            row["product_target"] = sphere_constant(n)
            row["lambda1_rel_error"] = abs(lam1 - n / 2) / (n / 2)
            row["product_rel_error"] = abs(row["product"] - row["product_target"]) / row["product_target"]
            verdicts[f"h={h:g}:lambda1"] = bool(row["lambda1_rel_error"] < budget)
            if n == 2:
                verdicts[f"h={h:g}:product"] = bool(row["product_rel_error"] < budget)
        rows.append(row)
    return {"runs": rows, "budget": budget, "verdicts": verdicts}


def run_scan(p: dict) -> dict:
    from .functionals import epsilon_scan

    rep = epsilon_scan(p["n"], p["delta"], p["eps"], resolution=p["resolution"], budget=p["budget"])
    out = rep.to_dict()
    out["verdicts"] = {"limit": rep.passed, "quadrature": bool(rep.quadrature["converged"])}
    return out


def run_hijazi(p: dict) -> dict:
    from .spectral import hijazi_check

    rows, verdicts = [], {}
    for model in p["models"]:
        r = hijazi_check(p["n"], p["h"], p["rmax"], model=model, budget=p["budget"], method=p["method"])
        rows.append(r)
        if model == "hemisphere":
            verdicts["hemisphere:equality"] = bool(abs(r["relative_gap"]) < p["budget"])
        else:
            verdicts[f"{model}:strict"] = bool(r["relative_gap"] > 0)
    return {"runs": rows, "verdicts": verdicts}


def run_surface2d(p: dict) -> dict:
    from .functionals import surface_scan

    return surface_scan(p["eps"], p["alpha"], p["delta"], budget=p["budget"], volume_budget=p["volume_budget"])


def run_symmetry(p: dict) -> dict:
    from .clifford import build_rep
    from .dirac_disc import ball_grid, halfball_grid
    from .spectral import spectral_symmetry_check

    make = halfball_grid if p["grid"] == "halfball" else ball_grid
    grid = make(p["n"], p["h"], p["rmax"])
    out = spectral_symmetry_check(build_rep(p["n"]), grid, p["model"], k=p["k"], tol=p["tol"], method=p["method"])
    out["verdicts"] = {"pairing": out["pass"]}
    return out


HELP = {
    "verify-clifford": "gamma-matrix relations and chiral projectors",
    "verify-killing": "closed-form identities of the half-space Killing spinors",
    "expand-check": "Fermi-chart expansions, correction orders and the Dirac identity",
    "spectrum": "smallest |lambda| of the chiral bag problem (h-table)",
    "scan": "bubble-scale scan of the conformal functional with extrapolation",
    "hijazi": "lambda_1^2 against the conformal Laplacian bound",
    "surface2d": "two-dimensional shrinking-bubble family",
    "symmetry": "pairing of the B+ and B- spectra",
}

COMMANDS: dict[str, Callable[[dict], dict]] = {
    "verify-clifford": run_verify_clifford,
    "verify-killing": run_verify_killing,
    "expand-check": run_expand_check,
    "spectrum": run_spectrum,
    "scan": run_scan,
    "hijazi": run_hijazi,
    "surface2d": run_surface2d,
    "symmetry": run_symmetry,
}


# ------------------------------------------------------------------------ reports


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def table_rows(command: str, result: dict) -> list[dict]:
    """Flat rows for CSV emission."""
    if command == "scan":
        return [{"eps": v["eps"], "J": v["J"]} for v in result["values"]]
    if command == "surface2d":
        return [{k: r[k] for k in ("eps", "lambda_bound", "volume", "volume_ratio", "product", "product_ratio")}
                for r in result["rows"]]
    if command == "spectrum":
        return [{"h": r["h"], "R_max": r["R_max"], "lambda1": r["lambda1"], "volume": r["volume"], "product": r["product"]}
                for r in result["runs"]]
    if command == "symmetry":
        return [{"index": i, "plus": a, "minus": b} for i, (a, b) in enumerate(zip(result["plus"], result["minus"]))]
    if command == "hijazi":
        return [{k: r[k] for k in ("model", "lambda1_sq", "mu1", "bound", "relative_gap")} for r in result["runs"]]
    return [{"verdict": k, "pass": v} for k, v in result.get("verdicts", {}).items()]


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def build_report(command: str, params: dict, result: dict | None, status: str, started: datetime,
                 elapsed: float, error: dict | None = None) -> dict:
    verdicts = (result or {}).get("verdicts", {})
    return _jsonable({
        "schema": SCHEMA_VERSION,
        "command": command,
        "config": {"command": command, "parameters": params, "deterministic": True},
        "status": status,
        "pass": bool(status == "ok" and verdicts and all(verdicts.values())),
        "verdicts": verdicts,
        "result": result,
        "error": error,
        "timestamp": {"started": started.isoformat(timespec="seconds"), "elapsed_seconds": round(elapsed, 3)},
    })


def run(command: str, params: dict, output: str | None = None, fmt: str = "json",
        figures: str | None = None) -> int:
    """Execute one command and write its report; returns the exit code."""
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    result, error, status = None, None, "ok"
    try:
        result = COMMANDS[command](params)
    except (ValueError, UsageError) as exc:
        status, error = "usage", {"type": type(exc).__name__, "message": str(exc)}
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError, MemoryError) as exc:
        status, error = "numerical-failure", {"type": type(exc).__name__, "message": str(exc)}
    report = build_report(command, params, result, status, started, time.perf_counter() - t0, error)
    if result is not None and figures:
        from .plotting import render

        report["figures"] = render(command, report["result"], figures)
    text = json.dumps(report, indent=2) + "\n"
    if fmt == "csv" and result is not None:
        _emit(to_csv(table_rows(command, report["result"])), output)
        if output is not None:
            Path(output).with_suffix(".json").write_text(text)
    else:
        _emit(text, output)
        if output is not None and result is not None:
            Path(output).with_suffix(".csv").write_text(to_csv(table_rows(command, report["result"])))
    if error is not None:
        sys.stderr.write(f"{command}: {error['type']}: {error['message']}\n")
        return EXIT_USAGE if status == "usage" else EXIT_NUMERIC
    sys.stderr.write(f"{command}: {'PASS' if report['pass'] else 'FAIL'}\n")
    return EXIT_PASS if report["pass"] else EXIT_FAIL


# ------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse already exits with 2; keep the message on one line
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chiralbag", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name, help=HELP[name], description=HELP[name])
        sp.add_argument("--config", help="config file (key = value lines, or .json)")
        sp.add_argument("--output", "-o", help="report path (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--figures", metavar="DIR", help="also render PNG figures into DIR")
        for key, spec in schema.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=f"param_{key}", metavar=key.upper(), default=argparse.SUPPRESS,
                            help=f"{spec.help} (default: {spec.default})".replace("%", "%%"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    flags = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_")}
    try:
        file_values = read_config(args.config) if args.config else {}
        params = resolve_params(args.command, file_values, flags)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"chiralbag {args.command}: error: {exc}\n")
        return EXIT_USAGE
    return run(args.command, params, args.output, args.format, args.figures)


if __name__ == "__main__":
    sys.exit(main())
