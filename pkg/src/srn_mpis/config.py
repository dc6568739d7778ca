"""Experiment config documents (YAML or JSON): schema validation and conversion."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .hjb import HJBConfig
from .network import PRESETS, ReactionNetwork, preset
from .pipeline import POLICIES, PipelineConfig
from .simulate import DEFAULT_CHUNK

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "network"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "species": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "reactions": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["rate"],
                        "properties": {
                            "reactants": {"type": ["object", "null"],
                                          "additionalProperties": {"type": "integer", "minimum": 0}},
                            "products": {"type": ["object", "null"],
                                         "additionalProperties": {"type": "integer", "minimum": 0}},
                            "rate": _pos,
                        },
                    },
                },
                "x0": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "T": _pos,
            },
            "oneOf": [{"required": ["preset"]}, {"required": ["species", "reactions", "x0", "T"]}],
        },
        "observable": {
            "type": "object",
            "additionalProperties": False,
            "required": ["species", "threshold"],
            "properties": {"species": {"type": ["string", "integer"]}, "threshold": _num},
        },
        "regression": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": {"type": "integer", "minimum": 2},
                "dt": _pos,
                "basis": {"type": "array",
                          "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                    "minItems": 2, "maxItems": 2}},
            },
        },
        "hjb": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s_max": {"type": ["integer", "null"], "minimum": 1},
                "u_floor": _pos,
                "ode_rel_tol": _pos,
                "ode_abs_tol": _pos,
                "max_step": _pos,
                "sigmoid_b": {"type": ["number", "null"]},
                "sigmoid_beta": _pos,
                "pilot_M": {"type": "integer", "minimum": 1},
            },
        },
        "forward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M_fw": {"type": "integer", "minimum": 2},
                "dts": {"type": "array", "items": _pos, "minItems": 1},
                "crude_M": {"type": ["integer", "null"], "minimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "policy": {"enum": list(POLICIES)},
                "chunk_size": {"type": "integer", "minimum": 1},
                "tv_M_test": _count,
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["tau-leap", "ssa"]},
                "dt": _pos,
                "M": {"type": "integer", "minimum": 1},
                "record": {"enum": ["paths", "final"]},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "output_dir": {"type": ["string", "null"]},
    },
}


@dataclass(frozen=True)
class SimulateConfig:
    method: str = "tau-leap"
    dt: float = 2.0**-4
    M: int = 10
    record: str = "paths"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated document plus the objects built from it."""

    document: dict
    pipeline: PipelineConfig
    simulate: SimulateConfig
    output_dir: str | None


def load_document(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars/lists."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def validate_document(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        message = e.message
        if e.validator == "oneOf" and list(e.path) == ["network"]:
            # name the missing keys instead of echoing the whole block
            nd = e.instance
            if "preset" in nd:
                message = "give either 'preset' or a custom network, not both"
            else:
                missing = [k for k in ("species", "reactions", "x0", "T") if k not in nd]
                message = f"{missing[0]!r} is a required property" if missing else message
        raise ConfigError(f"config error at {where}: {message}")


def build_config(doc: dict) -> ExperimentConfig:
    validate_document(doc)
    nd = doc["network"]
    if "preset" in nd:
        pr = preset(nd["preset"])
        net, x0, T = pr.network, tuple(nd.get("x0", pr.x0)), float(nd.get("T", pr.T))
        species, threshold = pr.species, pr.threshold
    else:
        try:
            net = ReactionNetwork.from_dict(nd)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"config error at network: {exc}") from None
        x0, T = tuple(nd["x0"]), float(nd["T"])
        species = threshold = None
    obs = doc.get("observable")
    if obs is not None:
        try:
            species = net.species_index(obs["species"])
        except (KeyError, IndexError) as exc:
            raise ConfigError(f"config error at observable/species: {exc}") from None
        threshold = obs["threshold"]
    if species is None:
        raise ConfigError("config error at <root>: 'observable' is a required property "
                          "for custom networks")
    reg = doc.get("regression", {})
    hj = dict(doc.get("hjb", {}))
    fw = doc.get("forward", {})
    hjb = HJBConfig(**{k: hj[k] for k in ("s_max", "u_floor", "ode_rel_tol", "ode_abs_tol", "max_step")
                       if k in hj})
    kwargs = {
        "network": net, "x0": x0, "T": T, "species": species, "threshold": threshold,
        "hjb": hjb, "seed": doc.get("seed", 0), "threads": doc.get("threads") or 1,
    }
    optional = {
        "fit_M": reg.get("M"), "fit_dt": reg.get("dt"),
        "basis": tuple(map(tuple, reg["basis"])) if "basis" in reg else None,
        "sigmoid_b": hj.get("sigmoid_b"), "sigmoid_beta": hj.get("sigmoid_beta"),
        "pilot_M": hj.get("pilot_M"), "M_fw": fw.get("M_fw"),
        "dts": tuple(float(v) for v in fw["dts"]) if "dts" in fw else None,
        "alpha": fw.get("alpha"), "policy": fw.get("policy"),
        "chunk_size": fw.get("chunk_size", DEFAULT_CHUNK), "tv_M_test": fw.get("tv_M_test"),
    }
    kwargs.update({k: v for k, v in optional.items() if v is not None})
    if "crude_M" in fw:
        kwargs["crude_M"] = fw["crude_M"]
    if len(x0) != net.d or np.any(np.asarray(x0) < 0):
        raise ConfigError(f"config error at network/x0: expected {net.d} nonnegative counts")
    try:
        pipe = PipelineConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config error: {exc}") from None
    sim = SimulateConfig(**doc.get("simulate", {}))
    return ExperimentConfig(doc, pipe, sim, doc.get("output_dir"))


def load_config(path=None, overrides=(), preset_name: str | None = None) -> ExperimentConfig:
    """Load and validate a config file, or start from a bare preset document."""
    if path is None and preset_name is None:
        raise ConfigError("give a config file or a preset name")
    doc = load_document(path) if path is not None else {
        "schema_version": SCHEMA_VERSION, "network": {"preset": preset_name}}
    if path is not None and preset_name is not None:
        doc.setdefault("network", {})["preset"] = preset_name
    return build_config(apply_overrides(doc, overrides))
