"""Experiment configuration: one documented plain-JSON schema.

Unknown keys are rejected everywhere (typos should fail loudly, not silently
fall back to defaults), and the raw config text is echoed verbatim into every
run's output directory so results stay auditable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockScheme
from .errors import ConfigError
from .linalg import INVERTIBLE, POSITIVE
from .models import (
    ARModel,
    ARSpec,
    FiniteSupportLaw,
    InnovationLaw,
    MatrixModel,
    Observable,
    OrthogonalLaw,
    PositiveLogNormalLaw,
    RotationDiagonalLaw,
)

TASKS = ("simulate", "delta", "tail", "lyapunov", "variance", "asip",
         "deviations", "report")


def _reject_unknown(section: dict, allowed, path: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {path} (allowed: {sorted(allowed)})")


def _get(section: dict, key: str, kind, default, path: str):
    if key not in section or section[key] is None:
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key} must be {kind.__name__}")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key} must be {kind.__name__}, got {type(value).__name__}")
    return value


def _int_list(section: dict, key: str, default, path: str):
    if key not in section or section[key] is None:
        return list(default)
    value = section[key]
    if not isinstance(value, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{path}.{key} must be a list of integers")
    return value


def _float_list(section: dict, key: str, default, path: str):
    if key not in section or section[key] is None:
        return list(default)
    value = section[key]
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{path}.{key} must be a list of numbers")
    return [float(v) for v in value]


def build_model(section: dict):
    _reject_unknown(section, {"family", "tau", "contraction", "innovation",
                              "observable", "law"}, "model")
    family = _get(section, "family", str, None, "model")
    if family == "ar":
        innov = section.get("innovation") or {}
        _reject_unknown(innov, {"law", "scale", "eta"}, "model.innovation")
        law_name = _get(innov, "law", str, "normal", "model.innovation")
        eta = _get(innov, "eta", float, 2.0 if law_name == "normal" else 1.0,
                   "model.innovation")
        innovation = InnovationLaw(
            name=law_name, scale=_get(innov, "scale", float, 1.0, "model.innovation"),
            eta=eta,
        )
        obs = section.get("observable") or {}
        _reject_unknown(obs, {"form", "kappa", "zeta"}, "model.observable")
        observable = Observable(
            form=_get(obs, "form", str, "identity", "model.observable"),
            kappa=_get(obs, "kappa", float, 1.0, "model.observable"),
            zeta=_get(obs, "zeta", float, 1.0, "model.observable"),
        )
        try:
            spec = ARSpec(
                tau=_get(section, "tau", float, 0.0, "model"),
                contraction=_get(section, "contraction", float, 0.5, "model"),
                innovation=innovation,
                observable=observable,
            )
        except Exception as exc:
            raise ConfigError(f"model: {exc}") from exc
        return ARModel(spec)
    if family in ("matrix-invertible", "matrix-positive"):
        law = section.get("law")
        if not isinstance(law, dict):
            raise ConfigError("model.law section required for matrix families")
        _reject_unknown(law, {"kind", "dimension", "shape", "scale", "sigma",
                              "matrices", "probs"}, "model.law")
        kind = _get(law, "kind", str, None, "model.law")
        dim = _get(law, "dimension", int, 2, "model.law")
        try:
            if kind == "rotation-diagonal":
                built = RotationDiagonalLaw(
                    dim, _get(law, "shape", float, 1.0, "model.law"),
                    _get(law, "scale", float, 1.0, "model.law"),
                )
            elif kind == "orthogonal":
                built = OrthogonalLaw(dim)
            elif kind == "positive-lognormal":
                built = PositiveLogNormalLaw(dim, _get(law, "sigma", float, 0.5, "model.law"))
            elif kind == "finite-support":
                mats = law.get("matrices")
                probs = law.get("probs")
                if not isinstance(mats, list) or not isinstance(probs, list):
                    raise ConfigError("finite-support law needs matrices and probs lists")
                matrix_kind = POSITIVE if family == "matrix-positive" else INVERTIBLE
                built = FiniteSupportLaw(
                    [np.asarray(m, dtype=float) for m in mats], probs, kind=matrix_kind
                )
            else:
                raise ConfigError(f"unknown matrix law kind {kind!r}")
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"model.law: {exc}") from exc
        if family == "matrix-positive" and built.kind != POSITIVE:
            raise ConfigError("matrix-positive family needs a positive law")
        return MatrixModel(built)
    raise ConfigError(f"model.family must be one of ar, matrix-invertible, "
                      f"matrix-positive; got {family!r}")


def build_scheme(section: dict, path: str = "scheme") -> BlockScheme:
    _reject_unknown(section, {"gamma1", "gamma2", "c", "b"}, path)
    try:
        g2 = section.get("gamma2")
        if isinstance(g2, str) and g2 == "inf":
            g2 = math.inf
        elif g2 is not None:
            g2 = float(g2)
        return BlockScheme(
            gamma1=_get(section, "gamma1", float, None, path),
            gamma2=g2,
            c=_get(section, "c", float, None, path),
            b=_get(section, "b", float, None, path),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    out: str
    threads: int
    plots: bool
    burn_in: int | None
    model_section: dict
    sections: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    raw_text: str = ""

    def model(self):
        return build_model(self.model_section)

    def section(self, name: str) -> dict:
        return self.sections.get(name) or {}


_TOP_KEYS = {"task", "seed", "out", "threads", "plots", "burnIn", "model",
             "tolerances"} | set(TASKS) - {"report"} | {"report"}

_SECTION_KEYS = {
    "simulate": {"n", "replicates", "aux", "checkpoints", "coeffPair"},
    "delta": {"nGrid", "replicates", "fitLags", "sensitivity", "blockSize"},
    "tail": {"samples"},
    "lyapunov": {"length", "replicates", "wedge"},
    "variance": {"nGrid", "lagGrid", "kGrid", "replicates", "length", "rinner",
                 "crossCheckLags", "scheme"},
    "asip": {"n", "replicates", "rinner", "calibration", "coupleGaps",
             "subblockRule", "control", "scheme", "grid"},
    "deviations": {"nGrid", "epsilon", "lGrid", "etaGrid", "gamma", "replicates",
                   "nPair", "probeBatch", "coeffPair"},
    "report": {"replicates", "asipN", "asipReplicates"},
}


def parse_config(text: str, task=None, seed=None, out=None, threads=None,
                 plots=None) -> ExperimentConfig:
    """Parse and validate a JSON config, applying CLI overrides."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, "config")

    cfg_task = _get(data, "task", str, None, "config")
    if cfg_task == "full-report":  # accepted alias for the report battery
        cfg_task = "report"
    if task is not None and cfg_task is not None and task != cfg_task:
        raise ConfigError(f"config task {cfg_task!r} conflicts with requested {task!r}")
    final_task = task or cfg_task
    if final_task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {final_task!r}")

    final_seed = seed if seed is not None else data.get("seed")
    if not isinstance(final_seed, int) or isinstance(final_seed, bool) or not (
        0 <= final_seed < 2**64
    ):
        raise ConfigError("seed must be a 64-bit unsigned integer (config or --seed)")

    model_section = data.get("model")
    if not isinstance(model_section, dict):
        raise ConfigError("config needs a model section")
    build_model(model_section)  # validate eagerly

    sections = {}
    for name in _SECTION_KEYS:
        if name in data:
            sec = data[name]
            if not isinstance(sec, dict):
                raise ConfigError(f"{name} section must be an object")
            _reject_unknown(sec, _SECTION_KEYS[name], name)
            sections[name] = sec

    tolerances = data.get("tolerances") or {}
    _reject_unknown(tolerances, {"tailCertFraction"}, "tolerances")

    return ExperimentConfig(
        task=final_task,
        seed=final_seed,
        out=out if out is not None else _get(data, "out", str, "results", "config"),
        threads=threads if threads is not None else _get(data, "threads", int, 1, "config"),
        plots=plots if plots is not None else _get(data, "plots", bool, False, "config"),
        burn_in=_get(data, "burnIn", int, None, "config"),
        model_section=model_section,
        sections=sections,
        tolerances=tolerances,
        raw_text=text,
    )


# re-exported list helpers for the runner
get = _get
int_list = _int_list
float_list = _float_list
