"""Run configuration: a flat ``key = value`` file with dotted keys.

Example::

    task = mlp_classify
    architecture.layers = 64, 32, 32, 32, 4
    architecture.manifold = stiefel
    optimizer = adagrad
    optimizer.lr = 0.01
    dataset = synthetic(4, 64, 512)
    epochs = 10

Unknown keys are rejected so typos never pass silently.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .data import parse_synthetic
from .errors import ParseError, ValidationError
from .optim import BETA_RULES

TASKS = ("mlp_classify", "rayleigh", "karcher_mean")
OPTIMIZERS = ("sgd", "adagrad", "cg")
MANIFOLD_REQUESTS = ("none", "stiefel", "spd")

DEFAULT_LAYERS = (64, 32, 32, 32, 8)


@dataclass(frozen=True)
class Architecture:
    layers: tuple = DEFAULT_LAYERS
    manifolds: tuple = ("stiefel",)

    def per_layer(self) -> list:
        n = len(self.layers) - 1
        return list(self.manifolds) * n if len(self.manifolds) == 1 else list(self.manifolds)


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adagrad"
    lr: float = 1e-2
    momentum: float = 0.0
    eps: float = 1e-10
    beta_rule: str = "fletcher_reeves"
    c1: float = 1e-4
    contraction: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0


@dataclass(frozen=True)
class ProblemSpec:
    n: Optional[int] = None
    p: int = 5
    k: int = 2


@dataclass(frozen=True)
class RunConfig:
    task: str = "mlp_classify"
    architecture: Architecture = field(default_factory=Architecture)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    dataset: Optional[str] = None
    output_dir: str = "out"

    @property
    def problem_n(self) -> int:
        if self.problem.n is not None:
            return self.problem.n
        return 50 if self.task == "rayleigh" else 5


def _int_list(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _word_list(text):
    return tuple(t.strip().lower() for t in text.replace(",", " ").split())


# key -> (section, attribute, converter)
_KEYS = {
    "task": (None, "task", str.strip),
    "epochs": (None, "epochs", int),
    "batch_size": (None, "batch_size", int),
    "seed": (None, "seed", int),
    "dataset": (None, "dataset", str.strip),
    "output_dir": (None, "output_dir", str.strip),
    "architecture.layers": ("architecture", "layers", _int_list),
    "architecture.manifold": ("architecture", "manifolds", _word_list),
    "optimizer": ("optimizer", "kind", lambda s: s.strip().lower()),
    "optimizer.kind": ("optimizer", "kind", lambda s: s.strip().lower()),
    "optimizer.lr": ("optimizer", "lr", float),
    "optimizer.momentum": ("optimizer", "momentum", float),
    "optimizer.eps": ("optimizer", "eps", float),
    "optimizer.beta_rule": ("optimizer", "beta_rule", lambda s: s.strip().lower()),
    "optimizer.c1": ("optimizer", "c1", float),
    "optimizer.contraction": ("optimizer", "contraction", float),
    "optimizer.max_backtracks": ("optimizer", "max_backtracks", int),
    "optimizer.initial_step": ("optimizer", "initial_step", float),
    "problem.n": ("problem", "n", int),
    "problem.p": ("problem", "p", int),
    "problem.k": ("problem", "k", int),
}


def parse_text(text: str, overrides: Optional[dict] = None) -> RunConfig:
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, _, value = (s.strip() for s in line.partition("="))
        if not key:
            raise ParseError("missing key", lineno)
        if not value:
            raise ParseError(f"missing value for {key!r}", lineno)
        if key not in _KEYS:
            raise ValidationError(key, "unknown key")
        canonical = _KEYS[key][:2]
        if canonical in seen:
            raise ParseError(f"{key!r} set twice (first on line {seen[canonical]})", lineno)
        seen[canonical] = lineno
        try:
            values[key] = _KEYS[key][2](value)
        except ValueError:
            raise ValidationError(key, f"invalid value {value!r}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_config(values)


def build_config(values: dict) -> RunConfig:
    top, sections = {}, {"architecture": {}, "optimizer": {}, "problem": {}}
    for key, value in values.items():
        section, attr, _ = _KEYS[key]
        (top if section is None else sections[section])[attr] = value
    cfg = RunConfig(
        architecture=Architecture(**sections["architecture"]),
        optimizer=OptimizerSpec(**sections["optimizer"]),
        problem=ProblemSpec(**sections["problem"]),
        **top,
    )
    if cfg.dataset is None and cfg.task == "mlp_classify":
        layers = cfg.architecture.layers
        cfg = dataclasses.replace(cfg, dataset=f"synthetic({layers[-1]}, {layers[0]}, 512)")
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.task not in TASKS:
        raise ValidationError("task", f"{cfg.task!r} is not one of {TASKS}")
    if cfg.epochs < 0:
        raise ValidationError("epochs", "must be >= 0")
    if cfg.batch_size < 1:
        raise ValidationError("batch_size", "must be positive")

    opt = cfg.optimizer
    if opt.kind not in OPTIMIZERS:
        raise ValidationError("optimizer", f"{opt.kind!r} is not one of {OPTIMIZERS}")
    if not opt.lr > 0:
        raise ValidationError("optimizer.lr", "must be positive")
    if not 0 <= opt.momentum < 1:
        raise ValidationError("optimizer.momentum", "must be in [0, 1)")
    if not opt.eps > 0:
        raise ValidationError("optimizer.eps", "must be positive")
    if opt.beta_rule not in BETA_RULES:
        raise ValidationError("optimizer.beta_rule", f"{opt.beta_rule!r} is not one of {BETA_RULES}")
    if not 0 < opt.c1 < 1:
        raise ValidationError("optimizer.c1", "must be in (0, 1)")
    if not 0 < opt.contraction < 1:
        raise ValidationError("optimizer.contraction", "must be in (0, 1)")
    if opt.max_backtracks < 0:
        raise ValidationError("optimizer.max_backtracks", "must be >= 0")
    if not opt.initial_step > 0:
        raise ValidationError("optimizer.initial_step", "must be positive")

    if cfg.task == "mlp_classify":
        _validate_mlp(cfg)
    elif cfg.task == "rayleigh":
        n, p = cfg.problem_n, cfg.problem.p
        if not n >= p >= 1:
            raise ValidationError("problem.p", f"need problem.n >= problem.p >= 1, got n={n}, p={p}")
    else:
        if cfg.problem_n < 1:
            raise ValidationError("problem.n", "must be positive")
        if cfg.problem.k < 1:
            raise ValidationError("problem.k", "must be positive")


def _validate_mlp(cfg: RunConfig) -> None:
    arch = cfg.architecture
    if len(arch.layers) < 2 or min(arch.layers) < 1:
        raise ValidationError("architecture.layers", "need at least two positive sizes")
    n_layers = len(arch.layers) - 1
    if len(arch.manifolds) not in (1, n_layers):
        raise ValidationError("architecture.manifold", f"give one entry or {n_layers} entries")
    for m in arch.manifolds:
        if m not in MANIFOLD_REQUESTS:
            raise ValidationError("architecture.manifold", f"{m!r} is not one of {MANIFOLD_REQUESTS}")
    for i, m in enumerate(arch.per_layer()):
        if m == "spd" and arch.layers[i] != arch.layers[i + 1]:
            raise ValidationError("architecture.manifold",
                                  f"spd weight for layer {i} needs a square {arch.layers[i]}->{arch.layers[i + 1]} map")

    synthetic = parse_synthetic(cfg.dataset)
    if synthetic is None:
        # sizes of a CSV dataset are checked when it is loaded
        return
    c, d, n = synthetic
    if min(c, d, n) < 1:
        raise ValidationError("dataset", "synthetic sizes must be positive")
    if d != arch.layers[0]:
        raise ValidationError("dataset", f"{d} features but the first layer expects {arch.layers[0]}")
    if c > arch.layers[-1]:
        raise ValidationError("dataset", f"{c} clusters but only {arch.layers[-1]} output classes")
    check_batch(cfg, n)


def check_batch(cfg: RunConfig, n: int) -> None:
    if cfg.batch_size > n:
        raise ValidationError("batch_size", f"{cfg.batch_size} exceeds dataset size {n}")
    if cfg.optimizer.kind == "cg" and cfg.batch_size != n:
        raise ValidationError("batch_size", f"conjugate gradient is full-batch only: set batch_size = {n}")


def parse_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read and validate a config file. ``overrides`` maps dotted keys to
    already-typed values (e.g. ``{"seed": 3}``)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_text(text, overrides)
