"""Experiment configuration: TOML text in, validated ExperimentConfig out.

Validation collects every violation (offending key plus the rule) instead of stopping at
the first one. ``config_hash`` digests the canonical JSON form, so key order and output
paths do not affect it.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .kernels import SumExpKernel, kernel_from_spec

POTENTIAL_KINDS = ("quadratic", "doublewell", "free")
SCHEMES = ("direct", "embedded", "compare")
NOISE_METHODS = ("ou", "circulant")
PHASE_SPACE_RULE = "alpha*beta must exceed 1, required by phase-space condition 1 < 2s < alpha*beta"


@dataclass(frozen=True)
class Violation:
    key: str
    rule: str

    def __str__(self):
        return f"{self.key}: {self.rule}"


class ConfigError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass
class ExperimentConfig:
    kernel: dict = field(default_factory=lambda: {"alpha": 1.0, "beta": 2.0, "tail_tol": 1e-3})
    potential: str = "quadratic"
    scheme: str = "embedded"
    dt: float = 0.01
    steps: int = 1000
    paths: int = 1
    seed: int = 0
    memory_window: float = math.inf
    s_param: float | None = None
    x0: float = 0.0
    v0: float = 0.0
    horizon: float = 100.0
    times: list = field(default_factory=lambda: [1.0, 5.0, 10.0])
    lags: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0])
    ladder: list = field(default_factory=lambda: [10.0, 100.0, 1000.0])
    rho: float = 0.25
    past_shift: float = 1.0
    T: float = 1.0
    method: str = "ou"
    growth_horizon: float = 0.0
    out: str = "out"

    def build_kernel(self) -> SumExpKernel:
        return kernel_from_spec(self.kernel)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @property
    def config_hash(self) -> str:
        return config_hash(self)


FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}
FLOAT_KEYS = ("dt", "memory_window", "x0", "v0", "horizon", "rho", "past_shift", "T", "growth_horizon")
INT_KEYS = ("steps", "paths", "seed")
LIST_KEYS = ("times", "lags", "ladder")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _normalize_kernel(spec, out: list[Violation]) -> dict:
    if not isinstance(spec, dict):
        out.append(Violation("kernel", "must be a table with alpha/beta/tail_tol or modes"))
        return {}
    unknown = set(spec) - {"alpha", "beta", "tail_tol", "modes"}
    for key in sorted(unknown):
        out.append(Violation(f"kernel.{key}", "unknown kernel key"))
    if "modes" in spec:
        if {"alpha", "beta", "tail_tol"} & set(spec):
            out.append(Violation("kernel", "give either modes or alpha/beta/tail_tol, not both"))
        modes = spec["modes"]
        ok = isinstance(modes, list) and all(
            isinstance(m, list) and len(m) == 2 and all(_is_number(a) for a in m) for m in modes
        )
        if not ok:
            out.append(Violation("kernel.modes", "must be a list of [c, lambda] pairs"))
            return {"modes": modes}
        for i, (c, lam) in enumerate(modes):
            if not (c > 0 and lam > 0):
                out.append(Violation(f"kernel.modes[{i}]", "c and lambda must both be > 0"))
        return {"modes": [[float(c), float(lam)] for c, lam in modes]}
    norm = {"alpha": spec.get("alpha"), "beta": spec.get("beta"), "tail_tol": spec.get("tail_tol", 1e-3)}
    for key, val in norm.items():
        if not _is_number(val):
            out.append(Violation(f"kernel.{key}", "required number"))
    if not all(_is_number(v) for v in norm.values()):
        return norm
    norm = {k: float(v) for k, v in norm.items()}
    if not norm["alpha"] > 0:
        out.append(Violation("kernel.alpha", "alpha must be > 0"))
    if not norm["beta"] > 1:
        out.append(Violation("kernel.beta", "beta must be > 1"))
    if not 0 < norm["tail_tol"] < 1:
        out.append(Violation("kernel.tail_tol", "tail_tol must lie in (0, 1)"))
    if norm["alpha"] > 0 and norm["beta"] > 1 and norm["alpha"] * norm["beta"] <= 1:
        out.append(Violation("kernel.alpha*beta", PHASE_SPACE_RULE))
    return norm


def validate(data: dict) -> ExperimentConfig:
    """Check every field and cross-field rule; raise ConfigError listing all violations."""
    out: list[Violation] = []
    data = copy.deepcopy(data)
    for key in sorted(set(data) - FIELD_NAMES):
        out.append(Violation(key, "unknown configuration key"))
        data.pop(key)
    defaults = ExperimentConfig()
    merged = {f.name: data.get(f.name, getattr(defaults, f.name)) for f in fields(ExperimentConfig)}
    merged["kernel"] = _normalize_kernel(merged["kernel"], out)
    for key in FLOAT_KEYS:
        if not _is_number(merged[key]):
            out.append(Violation(key, "must be a number"))
        else:
            merged[key] = float(merged[key])
    for key in INT_KEYS:
        val = merged[key]
        if isinstance(val, float) and val.is_integer():
            val = int(val)
        if not isinstance(val, int) or isinstance(val, bool):
            out.append(Violation(key, "must be an integer"))
        merged[key] = val
    for key in LIST_KEYS:
        val = merged[key]
        if not isinstance(val, list) or not all(_is_number(a) for a in val):
            out.append(Violation(key, "must be a list of numbers"))
        else:
            merged[key] = [float(a) for a in val]
    bad = {v.key for v in out}

    def rule(key, ok, text):
        if key not in bad and not ok:
            out.append(Violation(key, text))

    rule("dt", merged["dt"] > 0, "dt must be > 0")
    rule("steps", merged["steps"] >= 0, "steps must be >= 0")
    rule("paths", merged["paths"] >= 1, "paths must be >= 1")
    rule("seed", merged["seed"] >= 0, "seed must be >= 0")
    rule("memory_window", merged["memory_window"] >= 0, "memory_window must be >= 0")
    rule("horizon", merged["horizon"] > 0, "horizon must be > 0")
    rule("rho", merged["rho"] > 0, "rho must be > 0")
    rule("T", merged["T"] >= 0, "T must be >= 0")
    rule("growth_horizon", merged["growth_horizon"] >= 0, "growth_horizon must be >= 0")
    for key, text in (("potential", POTENTIAL_KINDS), ("scheme", SCHEMES), ("method", NOISE_METHODS)):
        rule(key, merged[key] in text, f"must be one of {', '.join(text)}")
    if "ladder" not in bad:
        lad = merged["ladder"]
        rule("ladder", len(lad) > 0 and all(a > 0 for a in lad) and all(b > a for a, b in zip(lad, lad[1:])),
             "ladder must be positive and strictly increasing")
    if "lags" not in bad:
        lags = merged["lags"]
        rule("lags", all(a >= 0 for a in lags) and all(b > a for a, b in zip(lags, lags[1:])),
             "lags must be nonnegative and strictly increasing")
    if "times" not in bad:
        rule("times", len(merged["times"]) > 0 and all(a > 0 for a in merged["times"]), "times must be positive")

    # s_param: 1 < 2s < alpha*beta
    kern = merged["kernel"]
    ab = kern["alpha"] * kern["beta"] if "alpha" in kern and all(_is_number(kern.get(k)) for k in ("alpha", "beta")) else None
    s = merged["s_param"]
    if s is None:
        if ab is None:
            s = 0.75
        elif ab > 1:
            s = 0.25 * (1.0 + ab)
    if s is not None:
        if not _is_number(s):
            out.append(Violation("s_param", "must be a number"))
        else:
            s = float(s)
            if not 1 < 2 * s:
                out.append(Violation("s_param", "need 1 < 2s < alpha*beta"))
            elif ab is not None and not 2 * s < ab:
                out.append(Violation("s_param", f"need 1 < 2s < alpha*beta (alpha*beta = {ab:g})"))
    merged["s_param"] = s
    if not isinstance(merged["out"], str):
        out.append(Violation("out", "must be a path string"))
    if out:
        raise ConfigError(out)
    return ExperimentConfig(**merged)


def check_grid_alignment(cfg: ExperimentConfig, keys=("lags", "times")) -> None:
    out = []
    for key in keys:
        for a in getattr(cfg, key):
            n = round(a / cfg.dt)
            if abs(n * cfg.dt - a) > 1e-9 * max(1.0, abs(a)):
                out.append(Violation(key, f"{a} is not a multiple of dt = {cfg.dt}"))
                break
    if out:
        raise ConfigError(out)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError([Violation(assignment, "override must look like key=value")])
    key, _, raw = assignment.partition("=")
    key = key.strip()
    value = _parse_value(raw.strip())
    target = data
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
    if parts[0] == "kernel" and len(parts) == 2:
        # switching between the two kernel forms drops the other one
        if parts[1] == "modes":
            for k in ("alpha", "beta", "tail_tol"):
                target.pop(k, None)
        else:
            target.pop("modes", None)
    target[parts[-1]] = value


def parse_kernel_arg(arg: str) -> dict:
    """``--kernel`` accepts a TOML file (top-level keys or a [kernel] table) or an inline
    table body such as ``alpha=1, beta=2, tail_tol=1e-3`` or ``modes=[[1.0, 1.0]]``."""
    import os

    if os.path.isfile(arg):
        with open(arg, "rb") as fh:
            data = tomllib.load(fh)
        return data.get("kernel", data)
    try:
        return tomllib.loads(f"kernel = {{{arg}}}")["kernel"]
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([Violation("kernel", f"cannot parse inline kernel spec: {exc}")]) from None


def parse_config(text: str, overrides=(), kernel: dict | None = None) -> ExperimentConfig:
    """Parse TOML text, replace the kernel table if ``kernel`` is given, apply ``key=value``
    overrides in order, then validate."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([Violation("<text>", f"malformed TOML: {exc}")]) from None
    if kernel is not None:
        data["kernel"] = dict(kernel)
    for item in overrides:
        apply_override(data, item)
    return validate(data)


def serialize_config(cfg: ExperimentConfig) -> str:
    data = cfg.to_dict()
    if data["s_param"] is None:
        data.pop("s_param")
    kernel = data.pop("kernel")
    data["kernel"] = kernel  # tables go last in TOML
    return tomli_w.dumps(data)


def canonical_json(cfg: ExperimentConfig) -> str:
    data = cfg.to_dict()
    data.pop("out")
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]
