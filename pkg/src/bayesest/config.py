"""Experiment configuration files (YAML) with exhaustive validation.

Layout::

    scenario:
      model: motor          # motor, linear, or a path to a YAML scenario file
      dt: 1.0e-4
      duration: 1.0         # motor: seconds simulated
      steps: 100            # linear: number of steps K
      x0: [...]
      prior_mean: [...]
      prior_cov: 1.0e-2     # scalar (times I), diagonal list or full matrix
      Q: 1.0e-4             # same forms as prior_cov
      R: 1.0e-2
      F: [[...]]            # linear only
      H: [[...]]            # linear only
      motor: {R_s: 0.18, ...}
      inputs: {amplitude_d: 380.0, freq_d: 50.0, amplitude_q: -380.0, freq_q: 100.0}
    filters:
      - {type: ekf}
      - {type: enkf, ensemble_size: 40, label: EnKF-40}
    runs: 100
    seed: 0
    output: results

A scenario file holds the same keys as the ``scenario`` section; keys given
inline override the file.  Every problem found is reported, each with the
key path that caused it.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np
import yaml

from .bench import (
    FILTER_PARAMS,
    LINEAR_ONLY,
    FilterConfig,
    MotorScenarioConfig,
    filter_param_errors,
    linear_scenario,
    motor_scenario,
)
from .motor import MotorParams

BUILTIN_MODELS = ("motor", "linear")
SCENARIO_KEYS = (
    "model", "dt", "duration", "steps", "x0", "prior_mean", "prior_cov",
    "Q", "R", "F", "H", "motor", "inputs",
)  # fmt: skip
INPUT_KEYS = ("amplitude_d", "freq_d", "amplitude_q", "freq_q")
MOTOR_KEYS = tuple(f.name for f in fields(MotorParams))
TOP_KEYS = ("scenario", "filters", "runs", "seed", "output")
DEFAULT_CONFIG = "motor_default.yaml"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every ``(key path, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(f"{p}: {m}" for p, m in self.errors))


@dataclass(frozen=True)
class ScenarioConfig:
    model: str = "motor"
    values: dict = field(default_factory=dict)  # every other scenario key, as written

    def to_dict(self):
        return {"model": self.model, **self.values}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    filters: tuple
    runs: int = 1
    seed: int = 0
    output: str = "results"
    base_dir: str = field(default=".", compare=False)

    def to_dict(self):
        out = {"scenario": self.scenario.to_dict(), "filters": []}
        for fc in self.filters:
            entry = {"type": fc.kind}
            if fc.label is not None:
                entry["label"] = fc.label
            entry.update(fc.params)
            out["filters"].append(entry)
        out.update(runs=self.runs, seed=self.seed, output=self.output)
        return out

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, seed=None, runs=None, filters=None):
        """Copy with CLI overrides; ``filters`` selects rows by label or type."""
        errors = []
        selected = self.filters
        if filters is not None:
            wanted = [f.strip() for f in filters if f.strip()]
            selected = tuple(fc for fc in self.filters if fc.name in wanted or fc.kind in wanted)
            known = {fc.name for fc in self.filters} | {fc.kind for fc in self.filters}
            errors += [("--filters", f"no configured filter matches {w!r}") for w in wanted if w not in known]
        if runs is not None and runs < 1:
            errors.append(("--runs", "must be >= 1"))
        if seed is not None and seed < 0:
            errors.append(("--seed", "must be >= 0"))
        if errors:
            raise ConfigError(errors)
        return ExperimentConfig(
            self.scenario,
            selected,
            self.runs if runs is None else runs,
            self.seed if seed is None else seed,
            self.output,
            self.base_dir,
        )

    def resolved_scenario(self):
        """Scenario keys after merging any referenced scenario file."""
        return _resolve(self.scenario.to_dict(), self.base_dir, [], "scenario")

    def model_hash(self):
        """Short digest of the resolved scenario, for provenance headers."""
        text = json.dumps(self.resolved_scenario(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def build_scenario(self):
        return build_scenario(self.resolved_scenario())


# ---------------------------------------------------------------- validation


def _number(v, path, errors, integer=False, positive=False, minimum=None):
    if isinstance(v, bool) or v is None:
        errors.append((path, "expected a number"))
        return None
    try:
        x = float(v)
    except (TypeError, ValueError):
        errors.append((path, f"expected a number, got {v!r}"))
        return None
    if not np.isfinite(x):
        errors.append((path, "must be finite"))
        return None
    if integer and not x.is_integer():
        errors.append((path, "expected an integer"))
        return None
    if positive and not x > 0:
        errors.append((path, "must be positive"))
        return None
    if minimum is not None and x < minimum:
        errors.append((path, f"must be >= {minimum}"))
        return None
    return int(x) if integer else x


def _array(v, path, errors):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        errors.append((path, "expected a number, list or nested list of numbers"))
        return None
    if a.ndim > 2 or not np.all(np.isfinite(a)):
        errors.append((path, "expected finite values in at most two dimensions"))
        return None
    return a


def _vector(v, n, path, errors):
    a = _array(v, path, errors)
    if a is None:
        return None
    if a.ndim != 1 or (n is not None and len(a) != n):
        errors.append((path, f"expected a list of {n} numbers"))
        return None
    return a


def _cov(v, n, path, errors, definite=False):
    a = _array(v, path, errors)
    if a is None:
        return None
    if a.ndim == 0:
        a = float(a) * np.eye(n)
    elif a.ndim == 1:
        if len(a) != n:
            errors.append((path, f"diagonal needs {n} entries, got {len(a)}"))
            return None
        a = np.diag(a)
    elif a.shape != (n, n):
        errors.append((path, f"expected a {n}x{n} matrix, got {a.shape[0]}x{a.shape[1]}"))
        return None
    if not np.allclose(a, a.T):
        errors.append((path, "must be symmetric"))
        return None
    lam = np.linalg.eigvalsh(a)
    if definite and not lam.min() > 0:
        errors.append((path, "must be positive definite"))
        return None
    if lam.min() < -1e-12 * max(1.0, np.abs(lam).max()):
        errors.append((path, "must be positive semidefinite"))
        return None
    return a


def _resolve(sc, base_dir, errors, path):
    """Merge a file-backed scenario under the inline keys."""
    model = sc.get("model", "motor")
    if not isinstance(model, str):
        errors.append((f"{path}.model", "expected a name or a file path"))
        return sc
    if model in BUILTIN_MODELS:
        return sc
    file = model if os.path.isabs(model) else os.path.join(base_dir, model)
    try:
        with open(file) as fh:
            base = yaml.safe_load(fh) or {}
    except OSError as exc:
        errors.append((f"{path}.model", f"cannot read scenario file: {exc.strerror or exc}"))
        return sc
    except yaml.YAMLError as exc:
        errors.append((f"{path}.model", f"scenario file is not valid YAML: {exc}"))
        return sc
    if not isinstance(base, dict):
        errors.append((f"{path}.model", "scenario file must hold a mapping"))
        return sc
    if base.get("model", "motor") not in BUILTIN_MODELS:
        errors.append((f"{path}.model", "a scenario file must name a built-in model"))
        return sc
    merged = dict(base)
    merged.update({k: v for k, v in sc.items() if k != "model"})
    return merged


def scenario_errors(sc, path="scenario"):
    """Every problem in a resolved scenario mapping."""
    errors = []
    for key in sc:
        if key not in SCENARIO_KEYS:
            errors.append((f"{path}.{key}", "unknown key"))
    model = sc.get("model", "motor")
    if model not in BUILTIN_MODELS:
        errors.append((f"{path}.model", f"unknown model {model!r}; use one of {', '.join(BUILTIN_MODELS)} or a file"))
        return errors
    if "dt" in sc:
        _number(sc["dt"], f"{path}.dt", errors, positive=True)
    if model == "motor":
        n, ny = 5, 2
        for key in ("F", "H", "steps"):
            if key in sc:
                errors.append((f"{path}.{key}", "only valid for the linear model"))
        if "duration" in sc:
            _number(sc["duration"], f"{path}.duration", errors, positive=True)
        motor = sc.get("motor", {})
        if not isinstance(motor, dict):
            errors.append((f"{path}.motor", "expected a mapping"))
        else:
            good = True
            for key, v in motor.items():
                if key not in MOTOR_KEYS:
                    errors.append((f"{path}.motor.{key}", "unknown motor parameter"))
                    good = False
                elif _number(v, f"{path}.motor.{key}", errors, positive=key != "T_L") is None:
                    good = False
            if good:
                try:
                    MotorParams(**{k: float(v) for k, v in motor.items()})
                except ValueError as exc:
                    errors.append((f"{path}.motor", str(exc)))
        inputs = sc.get("inputs", {})
        if not isinstance(inputs, dict):
            errors.append((f"{path}.inputs", "expected a mapping"))
        else:
            for key, v in inputs.items():
                if key not in INPUT_KEYS:
                    errors.append((f"{path}.inputs.{key}", "unknown input parameter"))
                else:
                    _number(v, f"{path}.inputs.{key}", errors)
    else:
        if "duration" in sc or "motor" in sc or "inputs" in sc:
            for key in ("duration", "motor", "inputs"):
                if key in sc:
                    errors.append((f"{path}.{key}", "only valid for the motor model"))
        if "steps" in sc:
            _number(sc["steps"], f"{path}.steps", errors, integer=True, minimum=1)
        n = ny = None
        for key in ("F", "H", "Q", "R"):
            if key not in sc:
                errors.append((f"{path}.{key}", "required for the linear model"))
        if "F" in sc:
            F = _array(sc["F"], f"{path}.F", errors)
            if F is not None:
                if F.ndim != 2 or F.shape[0] != F.shape[1]:
                    errors.append((f"{path}.F", "expected a square matrix"))
                else:
                    n = F.shape[0]
        if "H" in sc:
            H = _array(sc["H"], f"{path}.H", errors)
            if H is not None:
                if H.ndim != 2 or (n is not None and H.shape[1] != n):
                    errors.append((f"{path}.H", f"expected a matrix with {n} columns"))
                else:
                    ny = H.shape[0]
        if n is None:
            return errors
    if "Q" in sc:
        _cov(sc["Q"], n, f"{path}.Q", errors)
    if "R" in sc and ny is not None:
        _cov(sc["R"], ny, f"{path}.R", errors, definite=True)
    if "prior_cov" in sc:
        _cov(sc["prior_cov"], n, f"{path}.prior_cov", errors)
    for key in ("x0", "prior_mean"):
        if key in sc:
            _vector(sc[key], n, f"{path}.{key}", errors)
    return errors


def parse_config(data, base_dir="."):
    """Validate a loaded mapping and build an :class:`ExperimentConfig`."""
    errors = []
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "expected a mapping")])
    for key in data:
        if key not in TOP_KEYS:
            errors.append((str(key), "unknown key"))
    sc = data.get("scenario", {"model": "motor"})
    if not isinstance(sc, dict):
        errors.append(("scenario", "expected a mapping"))
        sc = {"model": "motor"}
    resolved = _resolve(sc, base_dir, errors, "scenario")
    errors += scenario_errors(resolved)
    linear = resolved.get("model") == "linear"

    filters = []
    raw = data.get("filters")
    if raw is None:
        errors.append(("filters", "required"))
        raw = []
    elif not isinstance(raw, list) or not raw:
        errors.append(("filters", "expected a non-empty list"))
        raw = []
    seen = {}
    for i, entry in enumerate(raw):
        p = f"filters[{i}]"
        if not isinstance(entry, dict):
            errors.append((p, "expected a mapping with a 'type' key"))
            continue
        kind = entry.get("type")
        if kind is None:
            errors.append((f"{p}.type", "required"))
            continue
        label = entry.get("label")
        if label is not None and not isinstance(label, str):
            errors.append((f"{p}.label", "expected a string"))
            label = None
        params = {k: v for k, v in entry.items() if k not in ("type", "label")}
        errs = [(f"{p}.{q}", m) for q, m in filter_param_errors(kind, params, "params")]
        errs = [(q.replace(".params.", "."), m) for q, m in errs]
        if kind in LINEAR_ONLY and not linear:
            errs.append((f"{p}.type", f"{kind} needs the linear model"))
        if errs:
            errors += errs
            continue
        fc = FilterConfig(kind, params, label)
        if fc.name in seen:
            errors.append((f"{p}.label", f"duplicate row name {fc.name!r} (also filters[{seen[fc.name]}])"))
            continue
        seen[fc.name] = i
        filters.append(fc)

    runs = _number(data.get("runs", 1), "runs", errors, integer=True, minimum=1)
    seed = _number(data.get("seed", 0), "seed", errors, integer=True, minimum=0)
    output = data.get("output", "results")
    if not isinstance(output, str) or not output:
        errors.append(("output", "expected a directory path"))
    if errors:
        raise ConfigError(errors)
    scenario = ScenarioConfig(sc.get("model", "motor"), {k: v for k, v in sc.items() if k != "model"})
    return ExperimentConfig(scenario, tuple(filters), runs, seed, output, base_dir)


def loads(text, base_dir="."):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"not valid YAML: {exc}")]) from None
    return parse_config(data, base_dir)


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([("--config", f"cannot read {path}: {exc.strerror or exc}")]) from None
    return loads(text, os.path.dirname(os.path.abspath(path)))


def default_config_text():
    return resources.files("bayesest").joinpath("data", DEFAULT_CONFIG).read_text()


def default_config():
    return loads(default_config_text())


# ---------------------------------------------------------------- building


def build_scenario(sc):
    """Scenario from a validated, resolved scenario mapping."""
    model = sc.get("model", "motor")
    if model == "motor":
        kw = {}
        if "motor" in sc:
            kw["params"] = MotorParams(**{k: float(v) for k, v in sc["motor"].items()})
        for key in ("dt", "duration", "prior_cov"):
            if key in sc:
                kw[key] = _float_tree(sc[key])
        for key in ("Q", "R"):
            if key in sc:
                kw[key] = _float_tree(sc[key])
        for key in ("x0", "prior_mean"):
            if key in sc:
                kw[key] = tuple(float(v) for v in sc[key])
        for key, v in sc.get("inputs", {}).items():
            kw[key] = float(v)
        return motor_scenario(MotorScenarioConfig(**kw))
    F = np.array(sc["F"], dtype=float)
    H = np.array(sc["H"], dtype=float)
    n, ny = F.shape[0], H.shape[0]
    errors = []
    Q = _cov(sc["Q"], n, "Q", errors)
    R = _cov(sc["R"], ny, "R", errors)
    P0 = _cov(sc.get("prior_cov", 1.0), n, "prior_cov", errors)
    x0 = np.array(sc.get("x0", np.zeros(n)), dtype=float)
    m0 = np.array(sc.get("prior_mean", np.zeros(n)), dtype=float)
    K = int(float(sc.get("steps", 100)))
    dt = float(sc.get("dt", 1.0))
    return linear_scenario(F, H, Q, R, x0, m0, P0, K, dt)


def _float_tree(v):
    a = np.array(v, dtype=float)
    return float(a) if a.ndim == 0 else a.tolist()


__all__ = [
    "FILTER_PARAMS",
    "ConfigError",
    "ExperimentConfig",
    "ScenarioConfig",
    "build_scenario",
    "default_config",
    "load",
    "loads",
    "parse_config",
]
