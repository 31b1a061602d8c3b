"""YAML experiment configuration: schema validation and problem assembly.

Scalar maps are written as expressions (``"-u**3 + u"``, ``"exp(-3*t)"``,
``"sin(x)**3"``) and parsed with sympy.  Polynomial f and g are converted
to coefficient arrays so the compiled kernels can be used.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema
import numpy as np
import sympy
import yaml
from sympy.parsing.sympy_parser import parse_expr

from .basis import DomainSpec
from .errors import ConfigError, PreconditionError
from .model import (
    DelaySpec,
    ForcingSpec,
    ForcingTerm,
    NonlinearitySpec,
    ProblemSpec,
    bump_history,
    mode_history,
)
from .solver import SolverConfig

RUN_KINDS = ("simulate", "check-hypotheses", "converge", "compare-oracle",
             "verify-estimates", "sweep")
CHECKS = ("decay-Lq", "decay-V1", "v2-budget", "linf-bound", "smoothing", "absorbing")

_number = {"type": "number"}
_num_or_expr = {"type": ["number", "string"]}
_modes = {"type": "object", "additionalProperties": {"type": "number"}, "minProperties": 1}

SCHEMA = {
    "type": "object",
    "required": ["kind", "problem", "solver"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(RUN_KINDS)},
        "name": {"type": "string"},
        "output": {"type": "string"},
        "problem": {
            "type": "object",
            "required": ["f", "g", "constants", "delay", "history"],
            "additionalProperties": False,
            "properties": {
                "domain": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"d": {"enum": [1, 2]}, "L": _num_or_expr, "L2": _num_or_expr},
                },
                "f": {"$ref": "#/$defs/scalar_map"},
                "g": {"$ref": "#/$defs/scalar_map"},
                "constants": {
                    "type": "object",
                    "required": ["p", "beta", "beta0"],
                    "additionalProperties": False,
                    "properties": {
                        "p": {"type": "number", "exclusiveMinimum": 0},
                        "beta": {"type": "number", "exclusiveMinimum": 0},
                        "a0": {"type": "number", "exclusiveMinimum": 0},
                        "b0": {"type": "number", "exclusiveMinimum": 0},
                        "beta0": {"type": "number", "exclusiveMinimum": 0},
                        "Lambda": {"type": "number", "exclusiveMinimum": 0},
                        "N": {"type": "number", "minimum": 0},
                    },
                },
                "delay": {
                    "type": "object",
                    "required": ["kind", "r"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["constant", "state-norm"]},
                        "r": {"type": "number", "minimum": 0},
                        "tau0": {"type": "number", "minimum": 0},
                        "c": {"type": "number", "exclusiveMinimum": 0},
                        "source": {"enum": ["current", "window"]},
                    },
                },
                "forcing": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["coef", "shape"],
                        "additionalProperties": False,
                        "properties": {
                            "coef": _num_or_expr,
                            "shape": {"oneOf": [{"type": "string"}, {
                                "type": "object", "required": ["modes"],
                                "additionalProperties": False,
                                "properties": {"modes": _modes}}]},
                            "bound": {"type": "number", "minimum": 0},
                        },
                    },
                },
                "history": {
                    "type": "object",
                    "minProperties": 1,
                    "maxProperties": 1,
                    "additionalProperties": False,
                    "properties": {
                        "expr": {"type": "string"},
                        "modes": _modes,
                        "bump": {
                            "type": "object",
                            "required": ["center", "width"],
                            "additionalProperties": False,
                            "properties": {
                                "center": _number,
                                "width": {"type": "number", "exclusiveMinimum": 0},
                                "lq_norm": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                    },
                },
                "q": {"oneOf": [{"type": "number", "minimum": 1},
                                {"type": "array", "minItems": 1,
                                 "items": {"type": "number", "minimum": 1}}]},
            },
        },
        "solver": {
            "type": "object",
            "required": ["k", "dt", "T"],
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "history_dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "audit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "S": {"type": "number", "exclusiveMinimum": 0},
                "grid": {"type": "integer", "minimum": 3},
                "lipschitz_amplitudes": {"type": "array", "minItems": 2, "items": _number},
            },
        },
        "converge": {
            "type": "object",
            "required": ["k_levels"],
            "additionalProperties": False,
            "properties": {"k_levels": {"type": "array", "minItems": 3,
                                        "items": {"type": "integer", "minimum": 1}}},
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 16},
                "times": {"type": "array", "minItems": 1, "items": _number},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "estimates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "checks": {"type": "array", "items": {"enum": list(CHECKS)}},
                "amplitudes": {"type": "array", "minItems": 3, "items": _number},
            },
        },
        "sweep": {
            "type": "object",
            "required": ["parameters"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [k for k in RUN_KINDS if k != "sweep"]},
                "parameters": {"type": "object", "minProperties": 1,
                               "additionalProperties": {"type": "array", "minItems": 1}},
            },
        },
    },
    "$defs": {
        "scalar_map": {
            "type": "object",
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
            "properties": {
                "expr": {"type": "string"},
                "coefficients": {"type": "array", "minItems": 1},
            },
        },
    },
}

_U, _V, _T, _X, _Y, _THETA = sympy.symbols("u v t x y theta")


@dataclass
class ExperimentConfig:
    """Validated experiment: the raw mapping plus assembled objects."""

    raw: dict
    kind: str
    problem: ProblemSpec
    solver: SolverConfig
    qs: list

    @property
    def digest(self):
        return config_digest(self.raw)

    def section(self, name):
        return self.raw.get(name, {})


def config_digest(raw):
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _parse(text, allowed, where, errors):
    try:
        expr = parse_expr(str(text), local_dict={s.name: s for s in allowed})
    except Exception as exc:  # sympy raises a zoo of exception types
        errors.append(f"{where}: cannot parse expression {text!r} ({exc})")
        return None
    stray = expr.free_symbols - set(allowed)
    if stray:
        errors.append(f"{where}: unknown symbols {sorted(map(str, stray))} in {text!r}")
        return None
    return expr


def _number_value(value, where, errors):
    if isinstance(value, (int, float)):
        return float(value)
    expr = _parse(value, (), where, errors)
    return None if expr is None else float(expr)


def _scalar_f(block, errors):
    if "coefficients" in block:
        try:
            return np.asarray(block["coefficients"], dtype=float).reshape(-1)
        except (TypeError, ValueError):
            errors.append("problem.f.coefficients: expected a list of numbers")
            return None
    expr = _parse(block["expr"], (_U,), "problem.f.expr", errors)
    if expr is None:
        return None
    if expr.is_polynomial(_U):
        coeffs = sympy.Poly(expr, _U).all_coeffs()[::-1] if expr.free_symbols else [expr]
        return np.array([float(c) for c in coeffs])
    return sympy.lambdify(_U, expr, modules="numpy")


def _scalar_g(block, errors):
    if "coefficients" in block:
        try:
            return np.atleast_2d(np.asarray(block["coefficients"], dtype=float))
        except (TypeError, ValueError):
            errors.append("problem.g.coefficients: expected a nested list of numbers")
            return None
    expr = _parse(block["expr"], (_U, _V), "problem.g.expr", errors)
    if expr is None:
        return None
    if expr.is_polynomial(_U, _V):
        poly = sympy.Poly(expr, _U, _V)
        terms = poly.terms() or [((0, 0), 0)]
        du = max(m[0] for m, _ in terms)
        dv = max(m[1] for m, _ in terms)
        coef = np.zeros((du + 1, dv + 1))
        for (i, j), c in terms:
            coef[i, j] = float(c)
        return coef
    return sympy.lambdify((_U, _V), expr, modules="numpy")


def _mode_key(key, d):
    if d == 1:
        return int(key)
    parts = [int(p) for p in str(key).replace("(", "").replace(")", "").split(",")]
    if len(parts) != 2:
        raise ValueError(f"2D mode key must be 'm,n', got {key!r}")
    return tuple(parts)


def _modes(block, d, where, errors):
    try:
        return {_mode_key(k, d): float(v) for k, v in block.items()}
    except ValueError as exc:
        errors.append(f"{where}: {exc}")
        return None


def _spatial(expr, d):
    if d == 1:
        fn = sympy.lambdify(_X, expr, modules="numpy")
        return lambda x: fn(np.asarray(x, dtype=float))
    fn = sympy.lambdify((_X, _Y), expr, modules="numpy")

    def shape(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return fn(pts[:, 0], pts[:, 1])

    return shape


def _forcing(items, d, errors):
    space = (_X,) if d == 1 else (_X, _Y)
    terms = []
    for i, item in enumerate(items):
        where = f"problem.forcing[{i}]"
        coef = item["coef"]
        if isinstance(coef, (int, float)):
            value = float(coef)
            coef_fn = (lambda v: lambda t: v)(value)
        else:
            expr = _parse(coef, (_T,), where + ".coef", errors)
            if expr is None:
                continue
            fn = sympy.lambdify(_T, expr, modules="numpy")
            coef_fn = (lambda f: lambda t: float(f(t)))(fn)
        shape = item["shape"]
        if isinstance(shape, str):
            expr = _parse(shape, space, where + ".shape", errors)
            if expr is None:
                continue
            shape_obj = _spatial(expr, d)
        else:
            shape_obj = _modes(shape["modes"], d, where + ".shape.modes", errors)
            if shape_obj is None:
                continue
        terms.append(ForcingTerm(coef_fn, shape_obj, item.get("bound")))
    return ForcingSpec(tuple(terms))


def _history(block, domain, q, errors):
    if "modes" in block:
        modes = _modes(block["modes"], domain.d, "problem.history.modes", errors)
        return None if modes is None else mode_history(domain, modes)
    if "bump" in block:
        b = block["bump"]
        try:
            return bump_history(domain, b["center"], b["width"], q, b.get("lq_norm", 1.0))
        except PreconditionError as exc:
            errors.append(f"problem.history.bump: {exc}")
            return None
    space = (_THETA, _X) if domain.d == 1 else (_THETA, _X, _Y)
    expr = _parse(block["expr"], space, "problem.history.expr", errors)
    if expr is None:
        return None
    fn = sympy.lambdify(space, expr, modules="numpy")
    if domain.d == 1:
        return lambda theta, x: fn(theta, np.asarray(x, dtype=float))

    def phi(theta, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return fn(theta, pts[:, 0], pts[:, 1])

    return phi


def build_experiment(raw):
    """Validate a raw mapping and assemble the problem; collects all errors."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path)):
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{path}: {err.message}")
    consts = raw.get("problem", {}).get("constants", {}) if isinstance(raw, dict) else {}
    b, b0 = (consts.get("beta"), consts.get("beta0")) if isinstance(consts, dict) else (None, None)
    if all(isinstance(x, (int, float)) for x in (b, b0)) and not b0 > b:
        errors.append(
            "problem.constants: beta0 must exceed beta (dissipation condition "
            "f(s)s <= -Lambda|s|^(beta0+1) + N needs beta0 > beta)"
        )
    if errors:
        raise ConfigError(errors)

    prob = raw["problem"]
    if raw["kind"] == "sweep" and "sweep" not in raw:
        errors.append("sweep: a sweep run needs a 'sweep' block")
    if raw["kind"] == "converge" and "converge" not in raw:
        errors.append("converge: a converge run needs a 'converge' block with k_levels")

    dom_block = prob.get("domain", {})
    d = dom_block.get("d", 1)
    L = _number_value(dom_block.get("L", "pi"), "problem.domain.L", errors)
    L2 = _number_value(dom_block["L2"], "problem.domain.L2", errors) if "L2" in dom_block else None
    qs = prob.get("q", [8.0])
    qs = [float(q) for q in (qs if isinstance(qs, list) else [qs])]

    f = _scalar_f(prob["f"], errors)
    g = _scalar_g(prob["g"], errors)
    domain = None
    if L is not None:
        try:
            domain = DomainSpec(d=d, L=L, L2=L2)
        except ValueError as exc:
            errors.append(f"problem.domain: {exc}")
    delay = history = None
    try:
        dblock = prob["delay"]
        delay = DelaySpec(kind=dblock["kind"], r=float(dblock["r"]),
                          tau0=float(dblock.get("tau0", dblock["r"])),
                          c=float(dblock.get("c", 1.0)), source=dblock.get("source", "current"))
    except PreconditionError as exc:
        errors.append(f"problem.delay: {exc}")
    forcing = ForcingSpec()
    if domain is not None:
        forcing = _forcing(prob.get("forcing", []), domain.d, errors)
        history = _history(prob["history"], domain, qs[0], errors)
    sblock = raw["solver"]
    try:
        solver = SolverConfig(k=sblock["k"], dt=float(sblock["dt"]), T=float(sblock["T"]),
                              history_dt=sblock.get("history_dt"))
    except PreconditionError as exc:
        errors.append(f"solver: {exc}")
    if errors:
        raise ConfigError(errors)

    nl = NonlinearitySpec(f=f, g=g, p=consts["p"], beta=consts["beta"],
                          a0=consts.get("a0", 1.0), b0=consts.get("b0", 1.0),
                          beta0=consts["beta0"], Lambda=consts.get("Lambda", 1.0),
                          N=consts.get("N", 0.0))
    problem = ProblemSpec(domain=domain, nonlinearity=nl, delay=delay, history=history,
                          forcing=forcing, q=qs[0], name=raw.get("name", ""))
    return ExperimentConfig(raw=raw, kind=raw["kind"], problem=problem, solver=solver, qs=qs)


def load_config(path):
    """Parse a YAML file and validate it; raises ConfigError listing all violations."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError([f"parse error: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a mapping"])
    return build_experiment(raw)


def set_path(raw, dotted, value):
    """Copy of ``raw`` with ``dotted`` (e.g. ``solver.k``) set to ``value``."""
    out = copy.deepcopy(raw)
    node = out
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return out
