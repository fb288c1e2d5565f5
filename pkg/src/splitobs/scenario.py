"""Scenario files: JSON with a versioned schema, validated before any numerics.

Agents, graph ids and arc endpoints are 1-based in files and 0-based in
the library. Matrices are lists of rows.
"""

from __future__ import annotations

import copy
import json
import logging
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .decomposition import Plant
from .designer import design_continuous, design_discrete
from .errors import SchemaError
from .netgraph import NeighborGraph
from .simulator import Fault, Scenario
from .switching import SwitchingSignal, generate

log = logging.getLogger(__name__)

SCHEMA_ID = "splitobs.scenario/1"

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_gain = {"oneOf": [_vector, _matrix]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "plant", "network", "signal", "design", "sim"],
    "properties": {
        "schema": {"const": SCHEMA_ID},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "required": ["A", "C"],
            "properties": {
                "A": _matrix,
                "C": {"type": "array", "minItems": 1, "items": _matrix},
                "time_kind": {"enum": ["continuous", "discrete"]},
                "sample_period": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["graphs"],
            "properties": {
                "graphs": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["arcs"],
                        "properties": {
                            "label": {"type": "string"},
                            "arcs": {"type": "array", "items": {
                                "type": "array", "minItems": 2, "maxItems": 2,
                                "items": {"type": "integer", "minimum": 1}}},
                        },
                    },
                },
                "weights": {"enum": ["uniform", "metropolis"]},
            },
        },
        "signal": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["fixed", "dwell", "avg_dwell", "arbitrary"]},
                "tau_d": {"type": "number", "exclusiveMinimum": 0},
                "delta0": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "min_step": {"type": "number", "exclusiveMinimum": 0},
                "breakpoints": {"type": "array", "minItems": 1, "items": {
                    "type": "array", "minItems": 2, "maxItems": 2,
                    "prefixItems": [{"type": "number", "minimum": 0}, {"type": "integer", "minimum": 1}]}},
            },
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rate", "mode"],
            "properties": {
                "rate": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["synthesize", "given"]},
                "regime": {"enum": ["fixed", "dwell", "arbitrary"]},
                "K": {"type": "array", "items": _gain},
                "Q": {"type": "array", "items": _matrix},
                "g": {"type": "number", "minimum": 0},
                "q": {"type": "integer", "minimum": 1},
                "method": {"enum": ["weighted", "mixed"]},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["horizon"],
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "x0": _vector,
                "xi0": _matrix,
                "g0": _vector,
                "seed": {"type": "integer", "minimum": 0},
                "adaptive": {"type": "boolean"},
                "experimental": {"type": "boolean"},
                "faults": {"type": "array", "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["time", "kind"],
                    "properties": {
                        "time": {"type": "number", "minimum": 0},
                        "kind": {"enum": ["remove_arc", "remove_agent"]},
                        "arc": {"type": "array", "minItems": 2, "maxItems": 2,
                                "items": {"type": "integer", "minimum": 1}},
                        "agent": {"type": "integer", "minimum": 1},
                    },
                }},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trace": {"type": "string"}, "report": {"type": "string"},
                           "indicator": {"type": "string"}},
        },
    },
}


# ----------------------------------------------------------------------------
# JSON with line numbers


def _line_map(text: str) -> dict:
    """Map from JSON path tuples to 1-based line numbers of their values."""
    lines = {}
    dec = json.JSONDecoder()
    ws = " \t\r\n"

    def skip(i):
        while i < len(text) and text[i] in ws:
            i += 1
        return i

    def line_of(i):
        return text.count("\n", 0, i) + 1

    def value(i, path):
        i = skip(i)
        lines[path] = line_of(i)
        c = text[i]
        if c == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = dec.raw_decode(text, skip(i))
                i = skip(i)
                i = value(i + 1, path + (key,))  # past ':'
                i = skip(i)
                if text[i] == "}":
                    return i + 1
                i += 1
        if c == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(value(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = dec.raw_decode(text, i)
        return end

    value(0, ())
    return lines


def _loc(lines, path) -> str:
    path = tuple(path)
    while path and path not in lines:
        path = path[:-1]
    dotted = "".join(f"[{p + 1}]" if isinstance(p, int) else f".{p}" for p in path).lstrip(".") or "<root>"
    ln = lines.get(path)
    return f"{dotted} (line {ln})" if ln else dotted


# ----------------------------------------------------------------------------
# parsing


def parse_text(text: str, source: str = "<string>") -> Scenario:
    if not text.strip():
        raise SchemaError([f"empty document; required blocks: {', '.join(SCHEMA['required'])}"], source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"invalid JSON: {exc.msg} (line {exc.lineno})"], source) from None
    lines = _line_map(text)
    return parse_document(doc, source, lines)


def parse_document(doc, source: str = "<dict>", lines: dict | None = None) -> Scenario:
    lines = lines or {}
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errs:
        raise SchemaError([f"{_loc(lines, e.absolute_path)}: {e.message}" for e in errs], source)
    problems = _semantic_problems(doc, lines)
    if problems:
        raise SchemaError(problems, source)
    canon = canonical(doc)
    try:
        return build(canon)
    except (ValueError, ArithmeticError) as exc:
        raise SchemaError([f"{type(exc).__name__}: {exc}"], source) from exc


def parse_scenario(path) -> Scenario:
    """Parse a scenario file or the name of a bundled fixture."""
    p = resolve(path)
    return parse_text(p.read_text(), str(p))


def resolve(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix == ".json" else p.name + ".json"
    bundled = resources.files("splitobs") / "fixtures" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"scenario {path} not found (and no bundled fixture of that name)")


def fixture_names() -> list:
    root = resources.files("splitobs") / "fixtures"
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".json"))


def _semantic_problems(doc, lines) -> list:
    out = []
    A = doc["plant"]["A"]
    n = len(A)
    for r, row in enumerate(A):
        if len(row) != n:
            out.append(f"{_loc(lines, ('plant', 'A', r))}: row {r + 1} has {len(row)} entries, expected {n}")
    m = len(doc["plant"]["C"])
    for i, Ci in enumerate(doc["plant"]["C"]):
        for r, row in enumerate(Ci):
            if len(row) != n:
                out.append(f"{_loc(lines, ('plant', 'C', i, r))}: row {r + 1} of C{i + 1} has "
                           f"{len(row)} entries, expected {n}")
    for k, g in enumerate(doc["network"]["graphs"]):
        for a, (j, i) in enumerate(g["arcs"]):
            if j > m or i > m:
                out.append(f"{_loc(lines, ('network', 'graphs', k, 'arcs', a))}: arc {j}->{i} "
                           f"refers to an agent beyond {m}")
            if j == i:
                log.warning("graph %d lists self-loop %d->%d explicitly; self-loops are implicit", k + 1, j, i)
    nfam = len(doc["network"]["graphs"])
    sig = doc["signal"]
    for b, (t, gid) in enumerate(sig.get("breakpoints", [])):
        if gid > nfam:
            out.append(f"{_loc(lines, ('signal', 'breakpoints', b))}: graph id {gid} beyond family size {nfam}")
    if sig["kind"] in ("dwell", "avg_dwell") and "tau_d" not in sig:
        out.append(f"{_loc(lines, ('signal',))}: kind {sig['kind']} needs tau_d")
    if sig["kind"] == "avg_dwell" and "delta0" not in sig:
        out.append(f"{_loc(lines, ('signal',))}: kind avg_dwell needs delta0")
    des = doc["design"]
    if des["mode"] == "given" and "K" not in des:
        out.append(f"{_loc(lines, ('design',))}: mode 'given' needs K")
    if des["mode"] == "synthesize":
        for key in ("K", "g", "q"):
            if key in des:
                out.append(f"{_loc(lines, ('design', key))}: '{key}' is only allowed with mode 'given'")
    if "K" in des and len(des["K"]) != m:
        out.append(f"{_loc(lines, ('design', 'K'))}: {len(des['K'])} gains for {m} agents")
    if "Q" in des and len(des["Q"]) != m:
        out.append(f"{_loc(lines, ('design', 'Q'))}: {len(des['Q'])} Q matrices for {m} agents")
    sim = doc["sim"]
    if "x0" in sim and len(sim["x0"]) != n:
        out.append(f"{_loc(lines, ('sim', 'x0'))}: x0 has {len(sim['x0'])} entries, expected {n}")
    if "xi0" in sim and (len(sim["xi0"]) != m or any(len(r) != n for r in sim["xi0"])):
        out.append(f"{_loc(lines, ('sim', 'xi0'))}: xi0 must be {m} rows of {n} entries")
    if sim.get("adaptive") and "g0" not in sim:
        out.append(f"{_loc(lines, ('sim',))}: adaptive mode needs g0")
    if "g0" in sim and len(sim["g0"]) != m:
        out.append(f"{_loc(lines, ('sim', 'g0'))}: g0 has {len(sim['g0'])} entries, expected {m}")
    for k, f in enumerate(sim.get("faults", [])):
        need = "arc" if f["kind"] == "remove_arc" else "agent"
        if need not in f:
            out.append(f"{_loc(lines, ('sim', 'faults', k))}: {f['kind']} needs '{need}'")
    return out


def canonical(doc) -> dict:
    """Defaults made explicit, arcs deduplicated and sorted, self-loops dropped."""
    d = copy.deepcopy(doc)
    d.setdefault("name", "")
    p = d["plant"]
    p.setdefault("time_kind", "continuous")
    p.setdefault("sample_period", 1.0)
    net = d["network"]
    net.setdefault("weights", "uniform")
    for g in net["graphs"]:
        g.setdefault("label", "")
        g["arcs"] = sorted({(j, i) for j, i in g["arcs"] if j != i})
        g["arcs"] = [list(a) for a in g["arcs"]]
    des = d["design"]
    des.setdefault("regime", "fixed")
    des.setdefault("method", "weighted")
    sim = d["sim"]
    sim.setdefault("h", 0.01)
    sim.setdefault("seed", 0)
    sim.setdefault("adaptive", False)
    sim.setdefault("experimental", False)
    sim.setdefault("faults", [])
    sim["faults"] = sorted(sim["faults"], key=lambda f: f["time"])
    sig = d["signal"]
    if "breakpoints" not in sig:
        sig.setdefault("seed", 0)
        if sig["kind"] == "arbitrary":
            sig.setdefault("min_step", 0.01)
    d.setdefault("output", {})
    return d


def _gain_matrix(k, n):
    a = np.asarray(k, dtype=float)
    return a.reshape(n, 1) if a.ndim == 1 else a


def build(d: dict) -> Scenario:
    """Numeric Scenario from a canonical document."""
    p = d["plant"]
    plant = Plant(np.array(p["A"], dtype=float), tuple(np.array(c, dtype=float) for c in p["C"]),
                  p["time_kind"], float(p["sample_period"]))
    n, m = plant.n, plant.m
    graphs = tuple(NeighborGraph.from_arcs(m, ((j - 1, i - 1) for j, i in g["arcs"]))
                   for g in d["network"]["graphs"])
    weights = d["network"]["weights"]
    sim = d["sim"]
    horizon = float(sim["horizon"])
    sig = d["signal"]
    fam = len(graphs)
    kind = sig["kind"]
    if "breakpoints" in sig:
        bps = [float(t) for t, _ in sig["breakpoints"]]
        vals = [int(v) - 1 for _, v in sig["breakpoints"]]
        signal = SwitchingSignal(tuple(bps), tuple(vals), max(horizon, bps[-1]), kind,
                                 sig.get("tau_d"), sig.get("delta0"), fam)
    else:
        signal = generate(kind, fam, horizon, sig["seed"], sig.get("tau_d"), sig.get("delta0"),
                          sig.get("min_step", 0.01), integer=plant.time_kind == "discrete")
    des = d["design"]
    K = [_gain_matrix(k, n) for k in des["K"]] if "K" in des else None
    Qs = [np.array(q, dtype=float) for q in des["Q"]] if "Q" in des else None
    if plant.time_kind == "continuous":
        design = design_continuous(plant, graphs, float(des["rate"]), des["regime"], K, des.get("g"), Qs,
                                   sig.get("tau_d"), sig.get("delta0"), weights)
    else:
        design = design_discrete(plant, graphs, float(des["rate"]), K, des.get("q"), Qs, des["method"], weights)
    rng = np.random.default_rng(sim["seed"])
    x0 = np.array(sim["x0"], dtype=float) if "x0" in sim else rng.normal(size=n)
    xi0 = np.array(sim["xi0"], dtype=float) if "xi0" in sim else rng.normal(size=(m, n))
    faults = tuple(
        Fault(float(f["time"]), f["kind"],
              arc=(f["arc"][0] - 1, f["arc"][1] - 1) if "arc" in f else None,
              agent=f["agent"] - 1 if "agent" in f else None)
        for f in sim["faults"]
    )
    return Scenario(
        plant=plant, design=design, graphs=graphs, signal=signal, x0=x0, xi0=xi0, horizon=horizon,
        h=float(sim["h"]), g0=np.array(sim["g0"], dtype=float) if "g0" in sim else None,
        faults=faults, weights=weights, adaptive=bool(sim["adaptive"]),
        experimental=bool(sim["experimental"]), name=d.get("name", ""), source=d,
    )


def serialize(sc: Scenario) -> dict:
    """Canonical document a Scenario was built from."""
    if sc.source is None:
        raise ValueError("scenario was not built from a document")
    return copy.deepcopy(sc.source)


def dumps(sc: Scenario) -> str:
    return json.dumps(serialize(sc), indent=2, sort_keys=True)


def with_seed(sc: Scenario, seed: int) -> Scenario:
    """Rebuild with a different seed for generated signals and initial states."""
    d = serialize(sc)
    d["sim"]["seed"] = int(seed)
    if "breakpoints" not in d["signal"]:
        d["signal"]["seed"] = int(seed)
    return build(d)


def with_flags(sc: Scenario, **sim_flags) -> Scenario:
    d = serialize(sc)
    d["sim"].update(sim_flags)
    return build(d)


def load_scenario_file(path) -> Scenario:
    return parse_scenario(path)


__all__ = ["SCHEMA", "SCHEMA_ID", "build", "canonical", "dumps", "fixture_names", "load_scenario_file",
           "parse_document", "parse_scenario", "parse_text", "resolve", "serialize", "with_flags", "with_seed"]
