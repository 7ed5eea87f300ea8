"""Scenario configuration: parsing, presets and report serialization.

A scenario is a single JSON document (schema_version 1) naming an
operator (explicit sparse rows or a generator preset with a window), a
table of named scalar functions, a list of analysis requests and an
optional network block.  Scalar functions are tagged records such as
{"kind": "linear", "slope": 0.5} or {"kind": "pwl", "knots": [[0,0],[1,2]]}.

Everything raised here is a ConfigError carrying the path of the
offending key, so a misspelled field is reported as e.g.
`analyses[2].omega: unknown function 'omga'`.
"""

from __future__ import annotations

import importlib.resources
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import gainop, kfunc, network
from .errors import ConfigError
from .gainop import GainOperator, NonnegSeq
from .kfunc import ScalarFn
from .network import Network
from .sgc import GeometricEnvelope, TabulatedEnvelope, UgasReport, Verdict

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "fn_from_config",
    "fn_to_config",
    "operator_from_config",
    "network_from_config",
    "load_scenario",
    "bundled_scenario_names",
    "jsonable",
    "verdict_to_json",
    "ugas_report_to_json",
]


# ---------------------------------------------------------------------------
# scalar functions


def fn_from_config(cfg: Any, path: str = "fn") -> ScalarFn:
    if not isinstance(cfg, Mapping):
        raise ConfigError(path, f"expected a tagged function record, got {cfg!r}")
    kind = cfg.get("kind")
    try:
        if kind == "zero":
            return kfunc.ZERO
        if kind == "identity":
            return kfunc.IDENTITY
        if kind == "linear":
            return kfunc.Linear(cfg["slope"])
        if kind == "power":
            return kfunc.Power(cfg["coeff"], cfg["exponent"])
        if kind == "saturating":
            return kfunc.Saturating(cfg["coeff"], cfg["halfsat"])
        if kind == "pwl":
            return kfunc.PiecewiseLinear(cfg["knots"])
        if kind == "compose":
            return kfunc.compose(
                fn_from_config(cfg["outer"], f"{path}.outer"),
                fn_from_config(cfg["inner"], f"{path}.inner"),
            )
        if kind == "max":
            terms = [fn_from_config(t, f"{path}.terms[{k}]")
                     for k, t in enumerate(cfg["terms"])]
            return kfunc.max_of(terms)
        if kind == "idplus":
            return kfunc.IdPlus(fn_from_config(cfg["inner"], f"{path}.inner"))
        if kind == "inverse":
            return kfunc.InverseOf(fn_from_config(cfg["inner"], f"{path}.inner"))
    except KeyError as exc:
        raise ConfigError(path, f"missing field {exc} for kind {kind!r}") from None
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(path, str(exc)) from None
    raise ConfigError(path, f"unknown function kind {kind!r}")


def fn_to_config(fn: ScalarFn) -> dict:
    if isinstance(fn, kfunc.Zero):
        return {"kind": "zero"}
    if isinstance(fn, kfunc.Identity):
        return {"kind": "identity"}
    if isinstance(fn, kfunc.Linear):
        return {"kind": "linear", "slope": fn.slope}
    if isinstance(fn, kfunc.Power):
        return {"kind": "power", "coeff": fn.coeff, "exponent": fn.exponent}
    if isinstance(fn, kfunc.Saturating):
        return {"kind": "saturating", "coeff": fn.coeff, "halfsat": fn.halfsat}
    if isinstance(fn, kfunc.PiecewiseLinear):
        return {"kind": "pwl", "knots": [[r, v] for r, v in fn.knots]}
    if isinstance(fn, kfunc.Compose):
        return {"kind": "compose", "outer": fn_to_config(fn.outer),
                "inner": fn_to_config(fn.inner)}
    if isinstance(fn, kfunc.MaxOf):
        return {"kind": "max", "terms": [fn_to_config(t) for t in fn.terms]}
    if isinstance(fn, kfunc.IdPlus):
        return {"kind": "idplus", "inner": fn_to_config(fn.inner)}
    if isinstance(fn, kfunc.InverseOf):
        return {"kind": "inverse", "inner": fn_to_config(fn.inner)}
    raise ValueError(f"cannot serialize function {fn!r}")


def resolve_fn(spec: Any, functions: Mapping[str, ScalarFn], path: str) -> ScalarFn:
    """A function reference: either a name from the table or an inline record."""
    if isinstance(spec, str):
        if spec not in functions:
            raise ConfigError(path, f"unknown function {spec!r}")
        return functions[spec]
    return fn_from_config(spec, path)


# ---------------------------------------------------------------------------
# operators and networks


def operator_from_config(cfg: Mapping, path: str = "operator") -> GainOperator:
    if not isinstance(cfg, Mapping):
        raise ConfigError(path, "expected an operator record")
    if "preset" in cfg:
        return _operator_preset(cfg, path)
    if "rows" not in cfg:
        raise ConfigError(path, "need either 'preset' or 'rows'")
    window = cfg.get("window")
    if not isinstance(window, int) or window < 1:
        raise ConfigError(f"{path}.window", "need a positive integer window")
    rows = {}
    for key, entries in cfg["rows"].items():
        try:
            i = int(key)
        except ValueError:
            raise ConfigError(f"{path}.rows.{key}", "row keys must be integers") from None
        row = []
        for k, entry in enumerate(entries):
            entry_path = f"{path}.rows.{key}[{k}]"
            if not isinstance(entry, (list, tuple)) or len(entry) != 2:
                raise ConfigError(entry_path, "entries are [column, function] pairs")
            row.append((int(entry[0]), fn_from_config(entry[1], entry_path)))
        rows[i] = tuple(row)
    try:
        return GainOperator(window=window, rows=rows, name=cfg.get("name", "explicit"))
    except Exception as exc:
        raise ConfigError(path, str(exc)) from None


def _operator_preset(cfg: Mapping, path: str) -> GainOperator:
    preset = cfg["preset"]
    window = cfg.get("window")
    try:
        if preset == "example55":
            return gainop.example55(int(window))
        if preset == "cascade":
            return gainop.cascade(float(cfg.get("slope", 0.5)), int(window))
        if preset == "twonode":
            return gainop.twonode(float(cfg.get("a", 2.0)), float(cfg.get("b", 0.2)))
        if preset == "zero":
            return gainop.zero_operator(int(window))
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"bad preset parameters: {exc}") from None
    raise ConfigError(
        f"{path}.preset",
        f"unknown preset {preset!r}; available: cascade, example55, twonode, zero",
    )


def operator_at_window(cfg: Mapping, window: int) -> GainOperator | None:
    """Rebuild a preset operator at a different window; None when explicit."""
    if "preset" in cfg and cfg.get("preset") != "twonode":
        doubled = dict(cfg)
        doubled["window"] = window
        return _operator_preset(doubled, "operator")
    return None


def network_from_config(cfg: Mapping, path: str = "network") -> Network:
    if not isinstance(cfg, Mapping):
        raise ConfigError(path, "expected a network record")
    preset = cfg.get("preset")
    try:
        if preset == "linear_cascade":
            return network.linear_cascade(
                int(cfg["n"]),
                self_rate=float(cfg.get("self_rate", 1.0)),
                coupling=float(cfg.get("coupling", 0.25)),
                gain_slope=float(cfg.get("gain_slope", 0.5)),
                external_slope=float(cfg.get("external_slope", 4.0)),
                alpha_slope=float(cfg.get("alpha_slope", 0.25)),
            )
        if preset == "twonode":
            return network.twonode_network(
                float(cfg.get("a", 2.0)), float(cfg.get("b", 0.2))
            )
    except KeyError as exc:
        raise ConfigError(path, f"missing field {exc} for preset {preset!r}") from None
    if preset is not None:
        raise ConfigError(f"{path}.preset",
                          f"unknown preset {preset!r}; available: linear_cascade, twonode")
    if "subsystems" in cfg:
        return _affine_network(cfg, path)
    raise ConfigError(path, "need 'preset' or 'subsystems'")


def _affine_network(cfg: Mapping, path: str) -> Network:
    """Scalar affine subsystems: dx_i = self*x_i + sum couplings + input*u_i."""
    subs = []
    specs = cfg["subsystems"]
    for k, spec in enumerate(specs):
        p = f"{path}.subsystems[{k}]"
        try:
            self_coeff = float(spec.get("self", -1.0))
            couplings = {int(j): float(c) for j, c in spec.get("couplings", {}).items()}
            input_coeff = float(spec.get("input", 1.0))
            gains = tuple(
                (int(j), fn_from_config(fc, f"{p}.gains"))
                for j, fc in spec.get("gains", [])
            )
            alpha = fn_from_config(spec["alpha"], f"{p}.alpha")
            ext = fn_from_config(spec["external_gain"], f"{p}.external_gain")
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(p, str(exc)) from None
        neighbors = tuple(sorted(set(couplings) | {j for j, _ in gains}))

        def make_dynamics(a, cpl, order, b):
            coeffs = [cpl.get(j, 0.0) for j in order]

            def dynamics(x, nb, u, t):
                acc = a * x + b * u
                for c, xn in zip(coeffs, nb):
                    acc = acc + c * xn
                return acc

            return dynamics

        subs.append(network.Subsystem(
            dim=1,
            dynamics=make_dynamics(self_coeff, couplings, neighbors, input_coeff),
            lyapunov=network._abs_scalar,
            lyap_gradient=network._sign_gradient,
            neighbors=neighbors,
            gains=gains,
            external_gain=ext,
            decay_rate=alpha,
            coercivity_lower=kfunc.IDENTITY,
            coercivity_upper=kfunc.IDENTITY,
            lipschitz_bound=lambda R: 1.0,
        ))
    bounds = cfg.get("bounds", {})
    return Network(
        subs,
        coercivity_lower=fn_from_config(bounds.get("psi_lower", {"kind": "identity"}),
                                        f"{path}.bounds.psi_lower"),
        coercivity_upper=fn_from_config(bounds.get("psi_upper", {"kind": "identity"}),
                                        f"{path}.bounds.psi_upper"),
        decay_floor=resolve_required(bounds, "alpha_floor", f"{path}.bounds"),
        input_gain_bound=resolve_required(bounds, "input_gain", f"{path}.bounds"),
        name=str(cfg.get("name", "affine")),
    )


def resolve_required(bounds: Mapping, key: str, path: str) -> ScalarFn:
    if key not in bounds:
        raise ConfigError(f"{path}.{key}", "required for user-defined networks")
    return fn_from_config(bounds[key], f"{path}.{key}")


# ---------------------------------------------------------------------------
# scenario documents


def bundled_scenario_names() -> list:
    root = importlib.resources.files("sgnet") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(source: str | Path) -> dict:
    """Load a scenario config from a file path or a bundled scenario name."""
    p = Path(source)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        resource = importlib.resources.files("sgnet") / "scenarios" / f"{source}.json"
        if not resource.is_file():
            raise ConfigError(
                "scenario",
                f"{source!r} is neither a config file nor a bundled scenario "
                f"(available: {', '.join(bundled_scenario_names())})",
            )
        text = resource.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("scenario", f"invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("scenario", "top level must be an object")
    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    if "name" not in cfg:
        raise ConfigError("name", "scenario needs a name")
    if "analyses" in cfg and not isinstance(cfg["analyses"], list):
        raise ConfigError("analyses", "must be a list of analysis records")
    return cfg


def parse_functions(cfg: Mapping) -> dict:
    functions = {}
    for name, record in cfg.get("functions", {}).items():
        functions[name] = fn_from_config(record, f"functions.{name}")
    return functions


# ---------------------------------------------------------------------------
# report serialization


def jsonable(value: Any) -> Any:
    """Recursively convert package values into JSON-encodable structures."""
    if isinstance(value, Verdict):
        return verdict_to_json(value)
    if isinstance(value, UgasReport):
        return ugas_report_to_json(value)
    if isinstance(value, NonnegSeq):
        return {"values": [float(v) for v in value.values], "tail": value.tail}
    if isinstance(value, ScalarFn):
        return fn_to_config(value)
    if isinstance(value, GeometricEnvelope):
        return {"form": "geometric", "coeff": value.coeff, "rate": value.rate}
    if isinstance(value, TabulatedEnvelope):
        return {"form": "tabulated", "steps": list(value.steps)}
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value


def verdict_to_json(v: Verdict) -> dict:
    return {
        "status": v.status.value,
        "witness": jsonable(v.witness),
        "scope": v.scope,
    }


def ugas_report_to_json(report: UgasReport) -> dict:
    out = {
        "radii": list(report.radii),
        "uniform_decay": report.uniform_decay,
        "weak_attractivity_on_im_closure": report.weak_attractivity_on_imQ,
        "scope": report.scope,
    }
    if report.first_decay_step is not None:
        out["first_decay_step"] = {str(r): k for r, k in report.first_decay_step.items()}
    if report.kl_envelope is not None:
        out["kl_envelope"] = jsonable(report.kl_envelope)
    if report.ugs_envelope is not None:
        out["ugs_envelope"] = {str(r): v for r, v in report.ugs_envelope.items()}
        out["ugs_bound_slope"] = report.ugs_bound_slope
    if report.inconclusive_radii:
        out["inconclusive_radii"] = list(report.inconclusive_radii)
    return out
