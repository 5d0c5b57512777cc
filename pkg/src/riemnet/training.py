"""Training loops for the three configurable tasks, plus the metrics CSV and
checkpoint file formats."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Parameter
from .config import RunConfig, check_batch
from .data import load_dataset
from .errors import LineSearchFailed, ShapeMismatch
from .linalg import dumps_tensor, read_tensor
from .manifolds import Euclidean, parse_manifold
from .nn import Sequential, nll_graph, orthogonal_mlp
from .optim import SGD, Adagrad, ConjugateGradient, Optimizer
from .problems import KarcherProblem, RayleighProblem, random_symmetric

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "loss", "constraint_residual", "accuracy")
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.txt"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    constraint_residual: float
    accuracy: float = math.nan


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_metrics(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow([r.epoch, _fmt(r.loss), _fmt(r.constraint_residual), _fmt(r.accuracy)])


def read_metrics(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        return [EpochRecord(int(e), float(l), float(c), float(a)) for e, l, c, a in reader]


def save_checkpoint(params, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for p in params:
            fh.write(f"param: {p.name} manifold: {p.manifold}\n")
            fh.write(dumps_tensor(p.value))


def load_checkpoint(path) -> list[tuple]:
    """``[(name, manifold, value), ...]`` in file order."""
    entries = []
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    for line in lines:
        if not line.strip():
            continue
        if not line.startswith("param: ") or " manifold: " not in line:
            raise ValueError(f"expected a 'param:' header, got {line!r}")
        name, _, desc = line[len("param: "):].partition(" manifold: ")
        entries.append((name, parse_manifold(desc), read_tensor(lines)))
    return entries


def restore_checkpoint(params, path) -> None:
    """Copy checkpointed values into ``params`` matched by name."""
    by_name = {name: (m, v) for name, m, v in load_checkpoint(path)}
    for p in params:
        if p.name not in by_name:
            raise KeyError(f"checkpoint has no entry for {p.name}")
        m, v = by_name[p.name]
        if m != p.manifold or v.shape != p.shape:
            raise ShapeMismatch(f"{p.name}: checkpoint holds {m} {v.shape}, model has {p.manifold} {p.shape}")
        p.value = v


def constraint_residual(params) -> float:
    res = [p.manifold.residual(p.value) for p in params if not isinstance(p.manifold, Euclidean)]
    return max(res, default=0.0)


def make_optimizer(cfg: RunConfig, params) -> Optimizer:
    o = cfg.optimizer
    if o.kind == "sgd":
        return SGD(params, lr=o.lr, momentum=o.momentum)
    if o.kind == "adagrad":
        return Adagrad(params, lr=o.lr, eps=o.eps)
    return ConjugateGradient(params, beta_rule=o.beta_rule, c1=o.c1, contraction=o.contraction,
                             max_backtracks=o.max_backtracks, initial_step=o.initial_step)


def build_model(cfg: RunConfig, rng) -> Sequential:
    return orthogonal_mlp(cfg.architecture.layers, cfg.architecture.per_layer(), rng=rng)


def evaluate(model, features, labels) -> tuple[float, float]:
    """Mean NLL and accuracy over the whole dataset."""
    g = nll_graph(model, features, labels)
    logp = g.nodes[-2].value
    acc = float(np.mean(np.argmax(logp, axis=1) == labels))
    return float(g.output.value[0]), acc


class _CgDriver:
    """Steps a CG optimizer; two line-search failures in a row (the second
    from a steepest-descent restart) mean the objective is flat to
    round-off, after which stepping stops."""

    def __init__(self, opt: ConjugateGradient):
        self.opt = opt
        self.failed = False
        self.converged = False

    def step(self, objective):
        try:
            self.opt.step(objective)
            self.failed = False
        except LineSearchFailed:
            if self.failed:
                self.converged = True
            self.failed = True


def train_mlp(cfg: RunConfig) -> tuple[list[EpochRecord], Sequential]:
    rng = np.random.default_rng(cfg.seed)
    features, labels = load_dataset(cfg)
    n = features.shape[0]
    check_batch(cfg, n)
    if features.shape[1] != cfg.architecture.layers[0]:
        raise ShapeMismatch(f"dataset has {features.shape[1]} features, model expects {cfg.architecture.layers[0]}")
    model = build_model(cfg, rng)
    params = model.parameters()
    opt = make_optimizer(cfg, params)
    cg = _CgDriver(opt) if isinstance(opt, ConjugateGradient) else None

    def full_loss():
        return nll_graph(model, features, labels).output.value[0]

    records = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            graph = nll_graph(model, features[idx], labels[idx])
            graph.backward()
            if cg is None:
                opt.step()
            elif not cg.converged:
                cg.step(full_loss)
        loss, acc = evaluate(model, features, labels)
        records.append(EpochRecord(epoch, loss, constraint_residual(params), acc))
        log.info("epoch %d loss %.6g residual %.3g accuracy %.4f", epoch, loss, records[-1].constraint_residual, acc)
    return records, model


def _train_problem(cfg: RunConfig, problem) -> list[EpochRecord]:
    opt = make_optimizer(cfg, problem.parameters)
    cg = _CgDriver(opt) if isinstance(opt, ConjugateGradient) else None
    records = []
    for epoch in range(1, cfg.epochs + 1):
        opt.zero_grad()
        problem.backward()
        if cg is None:
            opt.step()
        elif not cg.converged:
            cg.step(problem.loss)
        records.append(EpochRecord(epoch, problem.loss(), problem.residual()))
    return records


def rayleigh_problem(cfg: RunConfig) -> RayleighProblem:
    rng = np.random.default_rng(cfg.seed)
    return RayleighProblem(random_symmetric(cfg.problem_n, rng), cfg.problem.p, seed=rng)


def karcher_problem(cfg: RunConfig) -> KarcherProblem:
    return KarcherProblem.random(cfg.problem_n, cfg.problem.k, seed=cfg.seed)


def run_training(cfg: RunConfig, out_dir=None) -> list[EpochRecord]:
    """Train per ``cfg``, write ``metrics.csv`` and ``checkpoint.txt`` into
    ``out_dir`` (default ``cfg.output_dir``) and return the epoch records."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    if cfg.task == "mlp_classify":
        records, model = train_mlp(cfg)
        params: list[Parameter] = model.parameters()
    else:
        problem = rayleigh_problem(cfg) if cfg.task == "rayleigh" else karcher_problem(cfg)
        records = _train_problem(cfg, problem)
        params = problem.parameters
    write_metrics(records, out_dir / METRICS_FILE)
    save_checkpoint(params, out_dir / CHECKPOINT_FILE)
    return records
