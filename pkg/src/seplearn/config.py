"""Scenario files (YAML) and run manifests.

Matrices are nested lists in row-major order. Any system or cost matrix may be
given once (held constant over the horizon) or as a per-step list.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError, SeplearnError
from .lti import Dims, NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem, validate_system

RUN_DEFAULTS = {"episodes": 10_000, "outer": 2, "seed": 0, "tol": 1e-3, "dither": 0.1, "workers": 1}


def _line_index(node, path=(), out=None):
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Doc:
    def __init__(self, data, lines, source):
        self.data, self.lines, self.source = data, lines, source

    def fail(self, path, msg):
        line = None
        for cut in range(len(path), -1, -1):
            if tuple(path[:cut]) in self.lines:
                line = self.lines[tuple(path[:cut])]
                break
        where = ".".join(str(p) for p in path) or "<root>"
        at = f"{self.source}:{line}: " if line else f"{self.source}: "
        return ConfigError(f"{at}{where}: {msg}")

    def get(self, path, default=KeyError):
        node = self.data
        for i, key in enumerate(path):
            if isinstance(node, list) and isinstance(key, int) and key < len(node):
                node = node[key]
                continue
            if not isinstance(node, dict) or key not in node:
                if default is KeyError:
                    raise self.fail(path[:i + 1], "missing required field")
                return default
            node = node[key]
        return node

    def number(self, path, default=KeyError, kind=float, minimum=None):
        v = self.get(path, default)
        if v is None:
            return v
        try:
            if isinstance(v, bool):
                raise TypeError
            out = kind(v)
            if kind is int and out != v:
                raise ValueError
        except (TypeError, ValueError):
            raise self.fail(path, f"expected {kind.__name__}, got {v!r}") from None
        if minimum is not None and out < minimum:
            raise self.fail(path, f"must be >= {minimum}, got {out}")
        return out

    def matrix(self, path, shape, count, default=KeyError):
        """Array of shape ``(count, *shape)`` from one matrix or a per-step list."""
        raw = self.get(path, default)
        if raw is None:
            return None
        try:
            arr = np.asarray(raw, dtype=float)
        except (TypeError, ValueError):
            raise self.fail(path, "expected a numeric (nested) list") from None
        if arr.shape == tuple(shape) or (arr.size == np.prod(shape) and arr.ndim <= len(shape)):
            return np.repeat(arr.reshape(shape)[None], count, axis=0)
        if arr.shape == (count,) + tuple(shape):
            return arr
        if arr.ndim >= 1 and arr.shape[0] == count and arr[0].size == np.prod(shape):
            return arr.reshape((count,) + tuple(shape))
        raise self.fail(path, f"expected shape {tuple(shape)} or {(count,) + tuple(shape)}, got {arr.shape}")


@dataclass(frozen=True)
class ScenarioConfig:
    dims: Dims
    model: TimeVaryingLinearSystem
    plant: Optional[TimeVaryingLinearSystem]
    noise: NoiseSpec
    cost: QuadraticCostSpec
    run: dict
    output: dict
    document: dict = field(repr=False)
    source: str = "<string>"

    @property
    def digest(self) -> str:
        return config_digest(self.document)

    def with_beta(self, beta: float) -> "ScenarioConfig":
        from dataclasses import replace
        return replace(self, cost=replace(self.cost, beta=float(beta)))


def config_digest(document: dict) -> str:
    """sha256 of the canonical JSON form; insensitive to key order, comments and layout."""
    canon = json.dumps(document, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode()).hexdigest()


def _system(doc: _Doc, section: str, dims: Dims, fallback=None) -> TimeVaryingLinearSystem:
    n, m, p, r, s, T = dims.n, dims.m, dims.p, dims.r, dims.s, dims.T
    get = lambda key, shape, count: doc.matrix((section, key), shape, count,
                                               default=KeyError if fallback is None else None)
    mats = {"A": get("A", (n, n), T), "B": get("B", (n, m), T), "D": get("D", (n, r), T),
            "C": get("C", (p, n), T + 1), "E": get("E", (p, s), T + 1)}
    if fallback is not None:
        mats = {k: getattr(fallback, k) if v is None else v for k, v in mats.items()}
    try:
        return validate_system(TimeVaryingLinearSystem(**mats), dims)
    except (SeplearnError, ValueError) as exc:
        raise doc.fail((section,), str(exc)) from None


def _noise(doc: _Doc, dims: Dims) -> NoiseSpec:
    n, r, s, T = dims.n, dims.r, dims.s, dims.T
    N = dims.n_primitives
    if doc.get(("noise", "cov"), None) is not None:
        mean = np.asarray(doc.get(("noise", "mean"), [0.0] * N), float)
        cov = np.asarray(doc.get(("noise", "cov")), float)
        try:
            return NoiseSpec(mean, cov, dims)
        except (SeplearnError, ValueError) as exc:
            raise doc.fail(("noise", "cov"), str(exc)) from None
    x0_mean = np.asarray(doc.get(("noise", "x0_mean"), [0.0] * n), float).reshape(-1)
    if x0_mean.size != n:
        raise doc.fail(("noise", "x0_mean"), f"expected {n} entries, got {x0_mean.size}")
    x0_cov = doc.matrix(("noise", "x0_cov"), (n, n), 1)[0]
    w_cov = doc.matrix(("noise", "w_cov"), (r, r), T)
    z_cov = doc.matrix(("noise", "z_cov"), (s, s), T + 1)
    w_mean = doc.get(("noise", "w_mean"), None)
    try:
        base = NoiseSpec.independent(dims, x0_mean, x0_cov, w_cov, z_cov, w_mean=w_mean)
    except (SeplearnError, ValueError) as exc:
        raise doc.fail(("noise",), str(exc)) from None
    cov = np.array(base.cov)
    for i, entry in enumerate(doc.get(("noise", "cross"), []) or []):
        path = ("noise", "cross", i)
        try:
            a, b = _block(base, entry["a"]), _block(base, entry["b"])
        except (KeyError, TypeError, ValueError) as exc:
            raise doc.fail(path, f"cross entries need blocks 'a' and 'b' like x0, w3, z1 ({exc})") from None
        block = doc.matrix(path + ("cov",), (a.stop - a.start, b.stop - b.start), 1)[0]
        cov[a, b] = block
        cov[b, a] = block.T
    try:
        return NoiseSpec(base.mean, cov, dims)
    except (SeplearnError, ValueError) as exc:
        raise doc.fail(("noise", "cross"), str(exc)) from None


def _block(noise: NoiseSpec, name: str) -> slice:
    kind, step = str(name)[0], str(name)[1:]
    if kind == "x" and step in ("", "0"):
        return noise.x0_slice
    if kind == "w":
        return noise.w_slice(int(step))
    if kind == "z":
        return noise.z_slice(int(step))
    raise ValueError(f"unknown block {name!r}")


def _cost(doc: _Doc, dims: Dims) -> QuadraticCostSpec:
    n, m, T = dims.n, dims.m, dims.T
    Q = doc.matrix(("cost", "Q"), (n, n), T)
    R = doc.matrix(("cost", "R"), (m, m), T)
    QT = doc.matrix(("cost", "QT"), (n, n), 1)[0]
    beta = doc.number(("cost", "beta"), 1.0, minimum=0.0)
    lin = {k: doc.get(("cost", k), None) for k in ("qx", "ru", "qT")}
    try:
        return QuadraticCostSpec(Q, R, QT, beta, **lin)
    except (SeplearnError, ValueError) as exc:
        raise doc.fail(("cost",), str(exc)) from None


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f"{source}:{mark.line + 1}: " if mark else f"{source}: "
        raise ConfigError(f"{at}invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    doc = _Doc(data, _line_index(node) if node is not None else {}, source)
    try:
        dims = Dims(**{k: doc.number(("dims", k), kind=int, minimum=1) for k in ("n", "m", "p", "r", "s", "T")})
    except TypeError as exc:
        raise doc.fail(("dims",), str(exc)) from None
    unknown = set(data) - {"dims", "model", "plant", "noise", "cost", "run", "output", "name", "description"}
    if unknown:
        raise doc.fail((sorted(unknown)[0],), "unknown section")
    model = _system(doc, "model", dims)
    plant = _system(doc, "plant", dims, fallback=model) if doc.get(("plant",), None) is not None else None
    noise = _noise(doc, dims)
    cost = _cost(doc, dims)
    run = dict(RUN_DEFAULTS)
    for key, default in RUN_DEFAULTS.items():
        kind = int if isinstance(default, int) else float
        run[key] = doc.number(("run", key), default, kind=kind, minimum=0 if kind is int else None)
    if "learn_episodes" in (doc.get(("run",), {}) or {}):
        run["learn_episodes"] = doc.number(("run", "learn_episodes"), kind=int, minimum=1)
    output = dict(doc.get(("output",), {}) or {})
    outdir = output.get("dir")
    if outdir is not None:
        parent = os.path.abspath(outdir)
        while not os.path.exists(parent):
            parent = os.path.dirname(parent)
        if not os.access(parent, os.W_OK):
            raise doc.fail(("output", "dir"), f"not writable: {outdir}")
    return ScenarioConfig(dims, model, plant, noise, cost, run, output, data, source)


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    return parse_config(text, source=path)


def bundled_example_path() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "example_two_step.yaml")


@dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    seed: int
    command: str
    artifacts: list = field(default_factory=list)
    started: str = ""
    finished: str = ""

    @staticmethod
    def now() -> str:
        return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def as_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)
