"""Declarative run configuration (YAML or JSON) and the objects it names."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from ..backends import (CachingBackend, ChatCompletionsBackend, PromptTemplate, ReplayBackend,
                        SampleCache, ScriptedBackend)
from ..calibration import load_builtin_template
from ..errors import ConfigError
from ..utility import RiskTransform, TextTemplate, UtilitySpec

BACKEND_KINDS = ("http", "oracle", "scripted", "replay")


def load_config(path_or_dict) -> dict:
    """Parse a config file. Relative paths inside it resolve against its directory."""
    if isinstance(path_or_dict, dict):
        cfg = copy.deepcopy(path_or_dict)
        cfg.setdefault("_base", str(Path.cwd()))
        return cfg
    path = Path(path_or_dict)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def config_digest(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    text = json.dumps(clean, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def resolve_path(cfg: dict, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def section(cfg: dict, name: str) -> dict:
    value = cfg.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return value


class Runtime:
    """Backends, cache and utility built from one config, shared across a run."""

    def __init__(self, cfg: dict, cache_path=None, offline: bool | None = None):
        self.cfg = cfg
        cache_path = cache_path if cache_path is not None else cfg.get("cache")
        self.cache = SampleCache(resolve_path(cfg, cache_path)) if cache_path else SampleCache()
        self.offline = bool(cfg.get("offline", False) if offline is None else offline)
        self._backends = {}
        self.tasks = {}

    def register(self, name: str, inner):
        """Use ``inner`` (wrapped in the run's cache) for backend ``name``."""
        self._backends[name] = CachingBackend(inner, self.cache, offline=self.offline)

    def backend(self, name: str):
        if name not in self._backends:
            specs = section(self.cfg, "backends")
            if name not in specs:
                raise ConfigError(f"backend {name!r} is not defined under 'backends'")
            self._backends[name] = self._build(name, dict(specs[name]))
        return self._backends[name]

    def _build(self, name, spec):
        kind = spec.pop("kind", None)
        if kind not in BACKEND_KINDS:
            raise ConfigError(f"backend {name!r}: kind must be one of {BACKEND_KINDS}, got {kind!r}")
        template = PromptTemplate.from_dict(spec.pop("template")) if "template" in spec else None
        backend_id = spec.pop("backend_id", name)
        kw = {} if template is None else {"template": template}
        if kind == "replay":
            return ReplayBackend(self.cache, backend_id, **kw)
        if kind == "http":
            if "model" not in spec:
                raise ConfigError(f"backend {name!r}: http backends need 'model'")
            inner = ChatCompletionsBackend(spec.pop("model"), backend_id=backend_id, **kw, **spec)
        elif kind == "scripted":
            inner = ScriptedBackend(spec.get("replies", [""]), backend_id=backend_id, **kw)
        else:
            from ..testbed import OracleBackend, load_task
            task = spec.get("task")
            if task is None:
                raise ConfigError(f"backend {name!r}: oracle backends need 'task'")
            model, utility, demos = load_task(resolve_path(self.cfg, task) if isinstance(task, str) else task)
            self.tasks[name] = (model, utility, demos)
            inner = OracleBackend(model, demos, sharpen=float(spec.get("sharpen", 1.0)),
                                  backend_id=backend_id, seed=spec.get("seed", 0), **kw)
        return CachingBackend(inner, self.cache, offline=self.offline)

    def utility(self, spec: dict | None = None) -> UtilitySpec:
        spec = dict(spec if spec is not None else section(self.cfg, "utility") or {"kind": "exact-match"})
        kind = spec.pop("kind", "exact-match")
        if kind == "judge":
            params = {"backend": self.backend(spec.pop("backend", "judge")),
                      "template": self.template(spec.pop("template", "judge")),
                      "seed": spec.pop("seed", 0)}
            return UtilitySpec("judge", params)
        if kind == "task":
            # utility matrix shipped with an oracle task file
            name = spec.pop("backend", "gen")
            self.backend(name)
            return self.tasks[name][1]
        return UtilitySpec(kind, spec)

    def template(self, name_or_path) -> TextTemplate:
        if name_or_path in ("judge", "p_true", "verb_2s", "rewrite"):
            return load_builtin_template(name_or_path)
        return TextTemplate.load(resolve_path(self.cfg, name_or_path))

    def transform(self) -> RiskTransform:
        t = section(self.cfg, "risk")
        return RiskTransform(float(t.get("scale", 1.0)), float(t.get("shift", 1.0)))

