"""Riemannian optimizers.

Every optimizer first turns a parameter's accumulated ``egrad`` into its
Riemannian gradient ``rgrad`` and then moves the parameter with its
manifold's retraction, so constrained parameters stay feasible after every
step. Unconstrained parameters take exactly the textbook Euclidean update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .autograd import Parameter, zero_grad
from .errors import LineSearchFailed, MissingGradient, NotPositiveDefinite, RankDeficient, RiemnetError

Objective = Callable[[], float]

GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class SgdConfig:
    lr: float
    momentum: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class AdagradConfig:
    lr: float
    eps: float = 1e-10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


BETA_RULES = ("fletcher_reeves", "polak_ribiere_plus")


@dataclass(frozen=True)
class CgConfig:
    beta_rule: str = "fletcher_reeves"
    c1: float = 1e-4
    contraction: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0

    def __post_init__(self):
        if self.beta_rule not in BETA_RULES:
            raise ValueError(f"beta_rule must be one of {BETA_RULES}, got {self.beta_rule!r}")
        if not 0 < self.c1 < 1:
            raise ValueError(f"c1 must be in (0, 1), got {self.c1}")
        if not 0 < self.contraction < 1:
            raise ValueError(f"contraction must be in (0, 1), got {self.contraction}")
        if self.max_backtracks < 0 or not self.initial_step > 0:
            raise ValueError("max_backtracks must be >= 0 and initial_step > 0")


def compute_rgrad(p: Parameter) -> np.ndarray:
    if p.egrad is None:
        raise MissingGradient(f"{p.name} has no gradient; run backward first")
    p.rgrad = p.manifold.egrad2rgrad(p.value, p.egrad)
    return p.rgrad


def _rgrad(p: Parameter) -> np.ndarray:
    if p.rgrad is None:
        raise MissingGradient(f"{p.name} has no Riemannian gradient; call compute_rgrad first")
    return p.rgrad


def sgd_step(p: Parameter, cfg: SgdConfig, state: dict) -> None:
    m = p.manifold
    x = p.value
    g = _rgrad(p)
    if cfg.momentum:
        buf = state.get("momentum_buffer")
        if buf is None:
            buf = g.copy()
        else:
            buf = cfg.momentum * m.transp(state["prev_point"], x, buf) + g
    else:
        buf = g
    x_new = m.retr(x, buf, -cfg.lr)
    if cfg.momentum:
        # keep the buffer tangent at the point it will be read from next
        state["momentum_buffer"] = m.transp(x, x_new, buf)
        state["prev_point"] = x_new
    p.value = x_new


def adagrad_step(p: Parameter, cfg: AdagradConfig, state: dict) -> None:
    m = p.manifold
    x = p.value
    g = _rgrad(p)
    acc = state.get("accumulator")
    acc = g * g if acc is None else acc + g * g
    state["accumulator"] = acc
    # entrywise scaling breaks tangency, so project back before retracting
    d = m.proj(x, g / (np.sqrt(acc) + cfg.eps))
    state["direction"] = d
    p.value = m.retr(x, d, -cfg.lr)


def cg_step(p: Parameter, cfg: CgConfig, state: dict, objective: Objective) -> None:
    """Nonlinear conjugate gradient with Armijo backtracking.

    ``objective()`` must return the full loss at the parameters' current
    values; candidates are evaluated by temporarily assigning ``p.value``.
    """
    m = p.manifold
    x = p.value
    g = _rgrad(p)
    gg = m.inner(x, g, g)
    if math.sqrt(max(gg, 0.0)) <= GRAD_FLOOR:
        return

    if "prev_direction" in state:
        prev_x = state["prev_point"]
        d_old = m.transp(prev_x, x, state["prev_direction"])
        if cfg.beta_rule == "fletcher_reeves":
            beta = gg / state["prev_grad_inner"]
        else:
            g_old = m.transp(prev_x, x, state["prev_grad"])
            beta = max(0.0, m.inner(x, g, g - g_old) / state["prev_grad_inner"])
        d = -g + beta * d_old
        if m.inner(x, d, g) >= 0.0:
            d = -g
    else:
        d = -g
    slope = m.inner(x, g, d)

    f0 = float(np.asarray(objective()).reshape(-1)[0])
    t = cfg.initial_step
    accepted = None
    try:
        for _ in range(cfg.max_backtracks + 1):
            try:
                cand = m.retr(x, d, t)
            except (RankDeficient, NotPositiveDefinite):
                cand = None
            if cand is not None:
                p.value = cand
                f = float(np.asarray(objective()).reshape(-1)[0])
                # f < f0 as well: near round-off the Armijo bound itself rounds to f0
                if f <= f0 + cfg.c1 * t * slope and f < f0:
                    accepted = (cand, f, t)
                    break
            t *= cfg.contraction
    finally:
        p.value = x if accepted is None else accepted[0]

    if accepted is None:
        state.clear()
        raise LineSearchFailed(f"no Armijo step after {cfg.max_backtracks} backtracks (f = {f0:.6g})")
    state.update(prev_direction=d, prev_grad=g, prev_grad_inner=gg, prev_point=x,
                 last_value=accepted[1], last_step=accepted[2])


class Optimizer:
    """Owns a parameter list and per-parameter state."""

    def __init__(self, params: Iterable[Parameter]):
        self.params = list(params)
        ids = [p.id for p in self.params]
        if len(set(ids)) != len(ids):
            raise ValueError("a parameter appears more than once")
        self.state: dict[int, dict] = {p.id: {} for p in self.params}

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def _update(self, p: Parameter, state: dict, objective: Optional[Objective]) -> None:
        raise NotImplementedError

    def step(self, objective: Optional[Objective] = None) -> None:
        for p in self.params:
            if p.egrad is None:
                continue
            try:
                compute_rgrad(p)
                self._update(p, self.state[p.id], objective)
            except RiemnetError as exc:
                exc.args = (f"parameter {p.name}: {exc}",)
                exc.parameter = p.name
                raise


class SGD(Optimizer):
    def __init__(self, params, lr: float, momentum: float = 0.0):
        super().__init__(params)
        self.config = SgdConfig(lr, momentum)

    def _update(self, p, state, objective):
        sgd_step(p, self.config, state)


class Adagrad(Optimizer):
    def __init__(self, params, lr: float = 1e-2, eps: float = 1e-10):
        super().__init__(params)
        self.config = AdagradConfig(lr, eps)

    def _update(self, p, state, objective):
        adagrad_step(p, self.config, state)


class ConjugateGradient(Optimizer):
    """Full-batch only: ``step`` needs an objective re-evaluating the loss."""

    def __init__(self, params, beta_rule: str = "fletcher_reeves", **armijo):
        super().__init__(params)
        self.config = CgConfig(beta_rule, **armijo)

    def _update(self, p, state, objective):
        if objective is None:
            raise ValueError("ConjugateGradient.step needs an objective")
        cg_step(p, self.config, state, objective)

    def reset(self) -> None:
        for s in self.state.values():
            s.clear()


def step_all(optimizer: Optimizer, model=None, objective: Optional[Objective] = None) -> None:
    """One optimizer step; with ``model`` given, parameters are visited in the
    model's order."""
    if model is not None:
        order = {p.id: i for i, p in enumerate(model.parameters())}
        optimizer.params.sort(key=lambda p: order.get(p.id, len(order)))
    optimizer.step(objective)
