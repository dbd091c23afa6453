"""Scenario files: JSON schema, matrix-spec builders, validation with error paths.

A scenario is a single JSON object naming the dynamics (H, channels, initial
state), the discretization and Monte Carlo budget, the engine, and the
requested observable outputs.  Complex numbers are [re, im] pairs.  Every
violation is reported with a JSON-pointer-style path so config errors are
fixable in one pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from jsonschema import Draft202012Validator

from .linalg import SIGMA_X, SIGMA_Y, SIGMA_Z, is_hermitian, operator_norm
from .meanfield import InteractionMap

ENGINES = (
    "pure_linear",
    "pure_nonlinear",
    "sme_linear",
    "sme_nonlinear",
    "ensemble",
    "meanfield",
)

_COMPLEX = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}

_MATRIX = {
    "oneOf": [
        {
            "type": "string",
            "enum": ["pauli_x", "pauli_y", "pauli_z", "zero", "identity", "number"],
        },
        {
            "type": "object",
            "properties": {"entries": {"type": "array", "items": {"type": "array", "items": _COMPLEX}}},
            "required": ["entries"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "scaled": {
                    "type": "object",
                    "properties": {
                        "op": {"$ref": "#/$defs/matrix"},
                        "factor": {"oneOf": [{"type": "number"}, _COMPLEX]},
                    },
                    "required": ["op", "factor"],
                    "additionalProperties": False,
                }
            },
            "required": ["scaled"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "sum": {"type": "array", "items": {"$ref": "#/$defs/matrix"}, "minItems": 1}
            },
            "required": ["sum"],
            "additionalProperties": False,
        },
    ]
}

_KET = {
    "oneOf": [
        {"type": "array", "items": _COMPLEX, "minItems": 1},
        {
            "type": "object",
            "properties": {"basis": {"type": "integer", "minimum": 0}},
            "required": ["basis"],
            "additionalProperties": False,
        },
    ]
}

_RHO0 = {
    "oneOf": [
        {"$ref": "#/$defs/matrix"},
        {
            "type": "object",
            "properties": {"pure": {"$ref": "#/$defs/ket"}},
            "required": ["pure"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"diag": {"type": "array", "items": {"type": "number"}, "minItems": 1}},
            "required": ["diag"],
            "additionalProperties": False,
        },
    ]
}

_INTERACTION = {
    "type": "object",
    "properties": {
        "variant": {"type": "string", "enum": ["zero", "hs_kernel", "potential"]},
        "table": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "kernel": {"type": "array", "items": {"type": "array", "items": _COMPLEX}},
        "conjugate_input": {"type": "boolean"},
    },
    "required": ["variant"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "$defs": {"matrix": _MATRIX, "ket": _KET},
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "dim": {"type": "integer", "minimum": 1, "maximum": 256},
        "hamiltonian": {"$ref": "#/$defs/matrix"},
        "channels": {"type": "array", "items": {"$ref": "#/$defs/matrix"}, "minItems": 1, "maxItems": 8},
        "n_channels": {"type": "integer", "minimum": 1},
        "rho0": _RHO0,
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "trajectories": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "engine": {"type": "string", "enum": list(ENGINES)},
        "picture": {"type": "string", "enum": ["schroedinger", "interaction", "auto"]},
        "meanfield": {
            "type": "object",
            "properties": {
                "interaction": _INTERACTION,
                "mode": {"type": "string", "enum": ["normalized", "linear"]},
                "picard_max_iter": {"type": "integer", "minimum": 1},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["interaction"],
            "additionalProperties": False,
        },
        "outputs": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "observable": {"$ref": "#/$defs/matrix"},
                    "stride": {"type": "integer", "minimum": 1},
                    "label": {"type": "string", "minLength": 1},
                },
                "required": ["observable", "label"],
                "additionalProperties": False,
            },
        },
    },
    "required": [
        "name",
        "dim",
        "hamiltonian",
        "channels",
        "rho0",
        "horizon",
        "dt",
        "trajectories",
        "seed",
        "engine",
    ],
    "additionalProperties": False,
}


class ScenarioError(Exception):
    """Config validation failure; ``errors`` is a list of (json_path, message)."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


def build_matrix(spec, d: int) -> np.ndarray:
    """Materialize a matrix spec at dimension d."""
    if isinstance(spec, str):
        if spec in ("pauli_x", "pauli_y", "pauli_z"):
            if d != 2:
                raise ValueError(f"{spec} requires dim 2, scenario has dim {d}")
            return {"pauli_x": SIGMA_X, "pauli_y": SIGMA_Y, "pauli_z": SIGMA_Z}[spec].copy()
        if spec == "zero":
            return np.zeros((d, d), dtype=complex)
        if spec == "identity":
            return np.eye(d, dtype=complex)
        if spec == "number":
            return np.diag(np.arange(d)).astype(complex)
        raise ValueError(f"unknown matrix builder {spec!r}")
    if "entries" in spec:
        m = np.array([[complex(re, im) for re, im in row] for row in spec["entries"]])
        if m.shape != (d, d):
            raise ValueError(f"entries have shape {m.shape}, expected ({d}, {d})")
        return m
    if "scaled" in spec:
        factor = spec["scaled"]["factor"]
        c = complex(factor[0], factor[1]) if isinstance(factor, list) else complex(factor)
        return c * build_matrix(spec["scaled"]["op"], d)
    if "sum" in spec:
        return sum(build_matrix(s, d) for s in spec["sum"])
    raise ValueError(f"unintelligible matrix spec {spec!r}")


def build_ket(spec, d: int) -> np.ndarray:
    if isinstance(spec, dict):
        k = spec["basis"]
        if k >= d:
            raise ValueError(f"basis index {k} out of range for dim {d}")
        out = np.zeros(d, dtype=complex)
        out[k] = 1.0
        return out
    out = np.array([complex(re, im) for re, im in spec])
    if out.shape != (d,):
        raise ValueError(f"ket has length {out.shape[0]}, expected {d}")
    return out


def build_rho0(spec, d: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Materialize the initial state; returns (rho0, ket or None if not explicitly pure)."""
    if isinstance(spec, dict) and "pure" in spec:
        ket = build_ket(spec["pure"], d)
        nrm = np.linalg.norm(ket)
        if nrm == 0:
            raise ValueError("pure initial state must be nonzero")
        ket = ket / nrm
        return np.outer(ket, ket.conj()), ket
    if isinstance(spec, dict) and "diag" in spec:
        w = np.asarray(spec["diag"], dtype=float)
        if w.shape != (d,):
            raise ValueError(f"diag weights have length {w.size}, expected {d}")
        return np.diag(w).astype(complex), None
    return build_matrix(spec, d), None


@dataclass
class Scenario:
    """A validated, materialized scenario ready to run."""

    name: str
    dim: int
    h: np.ndarray
    ls: np.ndarray  # (n, d, d)
    rho0: np.ndarray
    chi0: np.ndarray | None
    horizon: float
    dt: float
    trajectories: int
    seed: int
    engine: str
    picture: str  # resolved, never "auto"
    interaction: InteractionMap | None
    meanfield_mode: str
    picard_max_iter: int
    picard_tol: float
    outputs: list[tuple[str, np.ndarray, int]]  # (label, observable, stride)
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def steps(self) -> int:
        return round(self.horizon / self.dt)


def resolve_picture(requested: str, h: np.ndarray, dt: float) -> str:
    """``auto`` picks the interaction picture once the Hamiltonian is stiff on the grid."""
    if requested != "auto":
        return requested
    return "interaction" if operator_norm(h) * dt > 0.1 else "schroedinger"


def validate_scenario(data: dict) -> Scenario:
    """Full schema plus semantic validation; raises ScenarioError listing every violation."""
    errors: list[tuple[str, str]] = []
    validator = Draft202012Validator(SCENARIO_SCHEMA)
    for err in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        path = "/" + "/".join(str(p) for p in err.absolute_path)
        errors.append((path, err.message))
    if errors:
        raise ScenarioError(errors)

    d = data["dim"]
    h = ls = rho0 = chi0 = None
    try:
        h = build_matrix(data["hamiltonian"], d)
        if not is_hermitian(h, 1e-10):
            errors.append(("/hamiltonian", "H not Hermitian"))
    except ValueError as e:
        errors.append(("/hamiltonian", str(e)))
    try:
        ls = np.stack([build_matrix(s, d) for s in data["channels"]])
    except ValueError as e:
        errors.append(("/channels", str(e)))
    if ls is not None and "n_channels" in data and data["n_channels"] != ls.shape[0]:
        errors.append(("/n_channels", f"declared {data['n_channels']} but {ls.shape[0]} channels given"))
    try:
        rho0, chi0 = build_rho0(data["rho0"], d)
        if not is_hermitian(rho0, 1e-10):
            errors.append(("/rho0", "rho0 not Hermitian"))
        else:
            tr = float(np.trace(rho0).real)
            if abs(tr - 1.0) > 1e-10:
                errors.append(("/rho0", f"rho0 trace != 1 (got {tr:g})"))
            elif float(np.linalg.eigvalsh(rho0)[0]) < -1e-9:
                errors.append(("/rho0", "rho0 has a negative eigenvalue"))
    except ValueError as e:
        errors.append(("/rho0", str(e)))

    engine = data["engine"]
    if engine in ("pure_linear", "pure_nonlinear") and chi0 is None:
        errors.append(("/rho0", f"engine {engine} requires a pure initial state ({{'pure': ...}})"))

    steps = data["horizon"] / data["dt"]
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        errors.append(("/horizon", "horizon must be a positive whole number of dt steps"))

    interaction = None
    mf = data.get("meanfield")
    if engine == "meanfield":
        if mf is None:
            errors.append(("/meanfield", "engine meanfield requires a meanfield block"))
        else:
            try:
                interaction = _build_interaction(mf["interaction"], d)
            except ValueError as e:
                errors.append(("/meanfield/interaction", str(e)))

    outputs = []
    for i, out in enumerate(data.get("outputs", [])):
        try:
            op = build_matrix(out["observable"], d)
            stride = out.get("stride", 1)
            if round(steps) % stride:
                errors.append((f"/outputs/{i}/stride", f"stride {stride} does not divide {round(steps)} steps"))
            outputs.append((out["label"], op, stride))
        except ValueError as e:
            errors.append((f"/outputs/{i}/observable", str(e)))

    if errors:
        raise ScenarioError(errors)

    picture = resolve_picture(data.get("picture", "auto"), h, data["dt"])
    if engine == "meanfield":
        picture = "schroedinger"  # the mean-field solver integrates directly

    return Scenario(
        name=data["name"],
        dim=d,
        h=h,
        ls=ls,
        rho0=rho0,
        chi0=chi0,
        horizon=float(data["horizon"]),
        dt=float(data["dt"]),
        trajectories=data["trajectories"],
        seed=data["seed"],
        engine=engine,
        picture=picture,
        interaction=interaction,
        meanfield_mode=(mf or {}).get("mode", "normalized"),
        picard_max_iter=(mf or {}).get("picard_max_iter", 20),
        picard_tol=(mf or {}).get("picard_tol", 1e-3),
        outputs=outputs,
        raw=data,
    )


def _build_interaction(spec: dict, d: int) -> InteractionMap:
    conj = spec.get("conjugate_input", False)
    if spec["variant"] == "zero":
        return InteractionMap.zero(d)
    if spec["variant"] == "potential":
        if "table" not in spec:
            raise ValueError("potential variant requires a table")
        table = np.asarray(spec["table"], dtype=float)
        if table.shape != (d, d):
            raise ValueError(f"table has shape {table.shape}, expected ({d}, {d})")
        return InteractionMap.from_potential(table, conjugate_input=conj)
    if "kernel" not in spec:
        raise ValueError("hs_kernel variant requires a kernel")
    kernel = np.array([[complex(re, im) for re, im in row] for row in spec["kernel"]])
    if kernel.shape != (d * d, d * d):
        raise ValueError(f"kernel has shape {kernel.shape}, expected ({d * d}, {d * d})")
    return InteractionMap.from_kernel(kernel, conjugate_input=conj)


def load_scenario(path: str) -> Scenario:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError([("/", f"not valid JSON: {e}")])
    return validate_scenario(data)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` overrides (dotted paths, JSON-parsed values) to a raw scenario."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ScenarioError([("/", f"override {item!r} is not of the form key=value")])
        key, _, raw_val = item.partition("=")
        try:
            value = json.loads(raw_val)
        except json.JSONDecodeError:
            value = raw_val
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ScenarioError([("/" + key.replace(".", "/"), "cannot override inside a non-object")])
        node[parts[-1]] = value
    return out
