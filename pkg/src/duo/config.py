"""Flat key=value experiment configuration.

One option per line, ``key = value``; ``#`` starts a comment, blank lines
are ignored. Every key must be in the schema below; unknown keys or
malformed values raise ConfigError (the CLI maps this to exit code 3).
The environment variable DUO_SEED, when set, overrides the seed.

Schema (defaults in parentheses):
  seed            int   (42)     master seed for scenes and corruption
  checkpoint      str   (runs/source)  detector checkpoint directory
  outdir          str   (runs/out)     output directory for artifacts
  objective       enum  (duo)    duo | entropy_min | depth_unc_min | none
  corruption      enum  (gaussian_noise)  corruption kind
  severity        int   (5)      corruption severity 1..5
  stream_scenes   int   (1200)   scenes in the adaptation stream
  batch_size      int   (16)     scenes per adaptation step
  lr              float (3e-05)  adaptation learning rate
  momentum        float (0.9)    SGD momentum
  beta            float (0.1)    EMA threshold rate
  lambda          float (0.7)    geometric term weight
  alpha           float (4.0)    focal scale
  gamma           float (2.0)    focal exponent
  obj_threshold   float (0.3)    objectness emission threshold
  use_cfl         bool  (true)   semantic branch on/off
  use_ncl         bool  (true)   geometric branch on/off
  use_mask        bool  (true)   region mask on/off (off = all-ones)
  ncl_pixel_mode  enum  (mean)   mean | sum over pixels
  cfl_grad_mode   enum  (pseudo_label)  pseudo_label | full
  matrix_mode     enum  (outer)  outer | scalar
  adapt_scope     enum  (all)    all | norm_heads
  min_objects     int   (1)      scene generator lower object count
  max_objects     int   (4)      scene generator upper object count
  dump_scenes     bool  (true)   write the first scene as tensor files
  train_steps     int   (3000)   source training steps
  train_batch     int   (8)      source training batch size
  train_lr        float (0.02)   source training learning rate
  train_seed      int   (1234)   source training seed
  eval_scenes     int   (200)    clean scenes for the post-train gate
  sweep_lambda    floats (0.0,0.35,0.7)  grid for the sweep command
  sweep_alpha     floats (1.0,4.0)       grid for the sweep command
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .adapt import OBJECTIVES, AdaptConfig
from .world import CORRUPTION_KINDS


class ConfigError(ValueError):
    """Unknown key, bad value, or failed validation; CLI exit code 3."""


@dataclass
class ExperimentConfig:
    seed: int = 42
    checkpoint: str = "runs/source"
    outdir: str = "runs/out"
    objective: str = "duo"
    corruption: str = "gaussian_noise"
    severity: int = 5
    stream_scenes: int = 1200
    batch_size: int = 16
    lr: float = 3e-05
    momentum: float = 0.9
    beta: float = 0.1
    lambda_weight: float = 0.7
    alpha: float = 4.0
    gamma: float = 2.0
    obj_threshold: float = 0.3
    use_cfl: bool = True
    use_ncl: bool = True
    use_mask: bool = True
    ncl_pixel_mode: str = "mean"
    cfl_grad_mode: str = "pseudo_label"
    matrix_mode: str = "outer"
    adapt_scope: str = "all"
    min_objects: int = 1
    max_objects: int = 4
    dump_scenes: bool = True
    train_steps: int = 3000
    train_batch: int = 8
    train_lr: float = 0.02
    train_seed: int = 1234
    eval_scenes: int = 200
    sweep_lambda: tuple = (0.0, 0.35, 0.7)
    sweep_alpha: tuple = (1.0, 4.0)

    def validate(self) -> "ExperimentConfig":
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.corruption not in CORRUPTION_KINDS:
            raise ConfigError(
                f"corruption must be one of {CORRUPTION_KINDS}, got {self.corruption!r}"
            )
        if not 1 <= self.severity <= 5:
            raise ConfigError(f"severity must be 1..5, got {self.severity}")
        if self.stream_scenes <= 0 or self.batch_size <= 0:
            raise ConfigError("stream_scenes and batch_size must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr >= 0 and 0 <= momentum < 1")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.lambda_weight < 0:
            raise ConfigError("lambda must be >= 0")
        if self.alpha <= 0 or self.gamma < 0:
            raise ConfigError("need alpha > 0 and gamma >= 0")
        if not 0 < self.obj_threshold <= 1:
            raise ConfigError("obj_threshold must be in (0, 1]")
        if self.ncl_pixel_mode not in ("mean", "sum"):
            raise ConfigError(f"ncl_pixel_mode must be mean|sum, got {self.ncl_pixel_mode!r}")
        if self.cfl_grad_mode not in ("pseudo_label", "full"):
            raise ConfigError(
                f"cfl_grad_mode must be pseudo_label|full, got {self.cfl_grad_mode!r}"
            )
        if self.matrix_mode not in ("outer", "scalar"):
            raise ConfigError(f"matrix_mode must be outer|scalar, got {self.matrix_mode!r}")
        if self.adapt_scope not in ("all", "norm_heads"):
            raise ConfigError(f"adapt_scope must be all|norm_heads, got {self.adapt_scope!r}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if self.train_steps <= 0 or self.train_batch <= 0 or self.train_lr <= 0:
            raise ConfigError("train_steps, train_batch, train_lr must be positive")
        if self.eval_scenes <= 0:
            raise ConfigError("eval_scenes must be positive")
        return self

    def adapt_config(self, objective: str | None = None, **overrides) -> AdaptConfig:
        kw = dict(
            objective=self.objective if objective is None else objective,
            lr=self.lr,
            momentum=self.momentum,
            beta=self.beta,
            lambda_weight=self.lambda_weight,
            alpha=self.alpha,
            gamma=self.gamma,
            batch_size=self.batch_size,
            obj_threshold=self.obj_threshold,
            use_cfl=self.use_cfl,
            use_ncl=self.use_ncl,
            use_mask=self.use_mask,
            ncl_pixel_mode=self.ncl_pixel_mode,
            cfl_grad_mode=self.cfl_grad_mode,
            matrix_mode=self.matrix_mode,
            adapt_scope=self.adapt_scope,
        )
        kw.update(overrides)
        return AdaptConfig(**kw)


# config-file key -> dataclass field (lambda is a python keyword)
_KEY_TO_FIELD = {"lambda": "lambda_weight"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def _parse_value(field_name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        key = _FIELD_TO_KEY.get(field_name, field_name)
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse config file content; raises ConfigError on any violation."""
    types = {f.name: type(f.default) if f.default is not None else str
             for f in fields(ExperimentConfig)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        fname = _KEY_TO_FIELD.get(key, key)
        if fname not in types or key.startswith("_"):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if fname in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[fname] = _parse_value(fname, raw, types[fname])
    cfg = ExperimentConfig(**values)
    env_seed = os.environ.get("DUO_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"DUO_SEED must be an integer, got {env_seed!r}") from None
    return cfg.validate()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)
