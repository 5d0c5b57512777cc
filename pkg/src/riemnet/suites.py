"""Named verification suites, run by ``riemnet check --suite NAME`` and by
the acceptance tests.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
check passes, including its wall-clock budget.
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autograd import Graph, Parameter, grad_check
from .config import build_config
from .manifolds import Euclidean, PositiveDefinite, Stiefel
from .nn import Conv2d, Flatten, Linear, LogSoftmax, ReLU, Sequential, nll_graph, orthogonal_mlp
from .optim import SGD
from .problems import geodesic_midpoint, karcher_egrad_check
from .training import (
    CHECKPOINT_FILE,
    METRICS_FILE,
    _train_problem,
    karcher_problem,
    rayleigh_problem,
    train_mlp,
)

GRAD_TOL = 1e-5
FD_STEP = 1e-6
MEMBERSHIP_TOL = 1e-8
IDEMPOTENCE_TOL = 1e-12
CONV_TOL = 1e-12
TRAINING_RESIDUAL_TOL = 1e-6
N_SEEDS = 10
N_PAIRS = 20

DESK_MLP = (64, 32, 32, 32, 4)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3e} (limit {self.threshold:.1e}, {self.seconds:.2f}s){extra}"


def _check(name, value, threshold, seconds=0.0, detail="", le=True) -> CheckResult:
    ok = bool(value <= threshold) if le else bool(value >= threshold)
    return CheckResult(name, ok, float(value), float(threshold), seconds, detail)


def _budget(name, seconds, limit) -> CheckResult:
    return _check(f"{name}/runtime", seconds, limit, seconds)


# -- 1. gradient checks --------------------------------------------------------

def _away_from_zero(rng, shape, margin=0.05):
    z = rng.standard_normal(shape)
    return np.sign(z) * (margin + np.abs(z))


def primitive_graphs(seed: int) -> dict[str, tuple[Graph, list[Parameter]]]:
    """One small evaluated graph per primitive, each reduced to a scalar by a
    random weighting so every output entry carries gradient."""
    rng = np.random.default_rng(seed)
    out = {}

    def finish(g, node, params):
        if node.shape != (1,):
            node = g.sum(g.mul(node, g.const(rng.standard_normal(node.shape))))
        g.forward()
        return g, params

    def new(*shapes, away=False):
        g = Graph()
        ps = [Parameter(_away_from_zero(rng, s) if away else rng.standard_normal(s)) for s in shapes]
        return g, ps, [g.param(p) for p in ps]

    g, ps, (a, b) = new((3, 4), (4, 2))
    out["matmul"] = finish(g, g.matmul(a, b), ps)
    g, ps, (x, b) = new((3, 4), (4,))
    out["add_bias"] = finish(g, g.add_bias(x, b), ps)
    g, ps, (x,) = new((3, 5), away=True)
    out["relu"] = finish(g, g.relu(x), ps)
    g, ps, (x,) = new((3, 4))
    out["log_softmax_rows"] = finish(g, g.log_softmax_rows(x), ps)
    g, ps, (x,) = new((5, 4))
    out["nll_loss_mean"] = finish(g, g.nll_loss_mean(x, rng.integers(0, 4, size=5)), ps)
    g, ps, (x,) = new((2, 6))
    out["reshape"] = finish(g, g.reshape(x, (3, 4)), ps)
    g, ps, (x,) = new((2, 2, 5, 5))
    out["im2col"] = finish(g, g.im2col(x, 3, 3, stride=2, padding=1), ps)
    g, ps, (x,) = new((4, 3))
    out["scale"] = finish(g, g.scale(x, -2.5), ps)
    g, ps, (x,) = new((4, 3))
    out["sum"] = finish(g, g.sum(x), ps)
    g, ps, (a, b) = new((3, 3), (3, 3))
    out["add"] = finish(g, g.add(a, b), ps)
    g, ps, (a, b) = new((3, 3), (3, 3))
    out["mul"] = finish(g, g.mul(a, b), ps)
    g, ps, (x,) = new((2, 3, 4))
    out["permute"] = finish(g, g.permute(x, (2, 0, 1)), ps)
    return out


def desk_mlp_graph(seed: int, batch: int = 8):
    rng = np.random.default_rng(seed)
    model = orthogonal_mlp(DESK_MLP, "stiefel", rng=rng)
    x = rng.standard_normal((batch, DESK_MLP[0]))
    y = rng.integers(0, DESK_MLP[-1], size=batch)
    return nll_graph(model, x, y), model.parameters()


def suite_gradcheck(seed: int = 0, **_) -> list[CheckResult]:
    start = time.perf_counter()
    results = []
    worst: dict[str, float] = {}
    for s in range(seed, seed + N_SEEDS):
        for kind, (g, params) in primitive_graphs(s).items():
            err = max(grad_check(g, p, FD_STEP) for p in params)
            worst[kind] = max(worst.get(kind, 0.0), err)
    for kind, err in sorted(worst.items()):
        results.append(_check(f"gradcheck/{kind}", err, GRAD_TOL))
    t_mlp = time.perf_counter()
    mlp_err = 0.0
    for s in range(seed, seed + N_SEEDS):
        g, params = desk_mlp_graph(s)
        mlp_err = max(mlp_err, max(grad_check(g, p, FD_STEP) for p in params))
    results.append(_check("gradcheck/desk_mlp", mlp_err, GRAD_TOL, time.perf_counter() - t_mlp))
    results.append(_budget("gradcheck", time.perf_counter() - start, 30.0))
    return results


# -- 2. manifold contract ------------------------------------------------------

CONTRACT_MANIFOLDS = {
    "euclidean": Euclidean(5, 3),
    "stiefel": Stiefel(6, 3),
    "stiefel_transposed": Stiefel(7, 2, transposed=True),
    "spd": PositiveDefinite(4),
}


def smooth_objective(shape, rng):
    """``f(X) = sum(X * (B X)) + sum(C * X)`` on the tape; returns a function
    giving ``(value, egrad)`` at a point."""
    b = rng.standard_normal((shape[0], shape[0]))
    c = rng.standard_normal(shape)

    def f(x, grad=False):
        p = Parameter(x)
        g = Graph()
        xn = g.param(p)
        g.add(g.sum(g.mul(xn, g.matmul(g.const(b), xn))), g.sum(g.mul(g.const(c), xn)))
        val = g.forward()[0]
        if not grad:
            return val
        g.backward()
        return val, p.egrad

    return f


def contract_errors(m, rng) -> dict[str, float]:
    """Worst-case violation of each contract property at one random pair."""
    x = m.rand(rng)
    u = m.proj(x, rng.standard_normal(m.shape))
    u /= max(m.norm(x, u), 1e-300)
    err = {}
    err["retr_feasibility"] = max(m.residual(m.retr(x, u, t)) for t in (1e-3, 1e-1, 1.0))
    err["retr_zero_bitwise"] = 0.0 if np.array_equal(m.retr(x, u, 0.0), x) else 1.0

    t = 1e-2
    r_full = np.linalg.norm(m.retr(x, u, t) - (x + t * u))
    r_half = np.linalg.norm(m.retr(x, u, t / 2) - (x + t / 2 * u))
    # ratio r(t/2) / r(t); a retraction that is exact on straight lines has r = 0
    err["retr_second_order"] = 0.0 if r_full == 0.0 else r_half / r_full

    gvec = rng.standard_normal(m.shape)
    pg = m.proj(x, gvec)
    err["proj_idempotence"] = np.linalg.norm(m.proj(x, pg) - pg) / np.linalg.norm(gvec)

    f = smooth_objective(m.shape, rng)
    _, egrad = f(x, grad=True)
    rgrad = m.egrad2rgrad(x, egrad)
    worst = 0.0
    for _ in range(5):
        v = m.proj(x, rng.standard_normal(m.shape))
        analytic = m.inner(x, rgrad, v)
        numeric = (f(m.retr(x, v, FD_STEP)) - f(m.retr(x, v, -FD_STEP))) / (2 * FD_STEP)
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
    err["egrad2rgrad_identity"] = worst

    y = m.retr(x, u, 1.0)
    v = m.proj(x, rng.standard_normal(m.shape))
    moved = m.transp(x, y, v)
    if isinstance(m, Stiefel):
        Y, V = (y.T, moved.T) if m.transposed else (y, moved)
        err["transp_tangency"] = np.linalg.norm(Y.T @ V + V.T @ Y)
    elif isinstance(m, PositiveDefinite):
        err["transp_tangency"] = np.linalg.norm(moved - moved.T)
    else:
        err["transp_tangency"] = 0.0
    return err


CONTRACT_LIMITS = {
    "retr_feasibility": MEMBERSHIP_TOL,
    "retr_zero_bitwise": 0.0,
    "retr_second_order": 0.3,
    "proj_idempotence": IDEMPOTENCE_TOL,
    "egrad2rgrad_identity": GRAD_TOL,
    "transp_tangency": MEMBERSHIP_TOL,
}


def suite_retraction(seed: int = 0, **_) -> list[CheckResult]:
    start = time.perf_counter()
    results = []
    for name, m in CONTRACT_MANIFOLDS.items():
        rng = np.random.default_rng(seed)
        worst = {k: 0.0 for k in CONTRACT_LIMITS}
        for _ in range(N_PAIRS):
            for k, v in contract_errors(m, rng).items():
                worst[k] = max(worst[k], v)
        results.extend(_check(f"contract/{name}/{k}", worst[k], CONTRACT_LIMITS[k]) for k in CONTRACT_LIMITS)
    results.append(_budget("contract", time.perf_counter() - start, 10.0))
    return results


# -- 3. Rayleigh quotient -------------------------------------------------------

def rayleigh_config(optimizer: str, seed: int = 0, **opt):
    values = {"task": "rayleigh", "problem.n": 50, "problem.p": 5, "seed": seed, "optimizer": optimizer}
    values.update({f"optimizer.{k}": v for k, v in opt.items()})
    return values


def suite_rayleigh(seed: int = 0, **_) -> list[CheckResult]:
    start = time.perf_counter()
    results = []
    runs = [
        ("cg", dict(), 500, 1e-6),
        ("sgd", dict(lr=1e-3), 5000, 1e-4),
    ]
    for kind, opt, iters, tol in runs:
        t0 = time.perf_counter()
        cfg = build_config({**rayleigh_config(kind, seed, **opt), "epochs": iters})
        problem = rayleigh_problem(cfg)
        records = _train_problem(cfg, problem)
        gap = abs(records[-1].loss - problem.optimum())
        residual = max(r.constraint_residual for r in records)
        results.append(_check(f"rayleigh/{kind}", gap, tol, time.perf_counter() - t0,
                              f"cost {records[-1].loss:.10f}, oracle {problem.optimum():.10f}"))
        results.append(_check(f"rayleigh/{kind}/residual", residual, TRAINING_RESIDUAL_TOL))
    results.append(_budget("rayleigh", time.perf_counter() - start, 60.0))
    return results


# -- 4. Karcher mean -------------------------------------------------------------

KARCHER_LR = 0.1
KARCHER_STEPS = 200


def suite_karcher(seed: int = 0, **_) -> list[CheckResult]:
    start = time.perf_counter()
    cfg = build_config({"task": "karcher_mean", "problem.n": 5, "problem.k": 2, "seed": seed,
                        "optimizer": "sgd", "optimizer.lr": KARCHER_LR, "epochs": KARCHER_STEPS})
    problem = karcher_problem(cfg)
    grad_err = karcher_egrad_check(problem, seed=seed)
    _train_problem(cfg, problem)
    err = np.linalg.norm(problem.param.value - geodesic_midpoint(*problem.mats))
    secs = time.perf_counter() - start
    return [
        _check("karcher/egrad", grad_err, GRAD_TOL),
        _check("karcher/midpoint", err, 1e-5, secs),
        _check("karcher/residual", problem.residual(), TRAINING_RESIDUAL_TOL),
        _budget("karcher", secs, 30.0),
    ]


# -- 5. desk-scale MLP ----------------------------------------------------------

def mlp_config(seed: int = 0, epochs: int = 10, output_dir: Optional[str] = None) -> dict:
    values = {
        "task": "mlp_classify",
        "architecture.layers": DESK_MLP,
        "architecture.manifold": ("stiefel",),
        "optimizer": "adagrad",
        "optimizer.lr": 1e-2,
        "dataset": "synthetic(4, 64, 512)",
        "epochs": epochs,
        "batch_size": 32,
        "seed": seed,
    }
    if output_dir is not None:
        values["output_dir"] = output_dir
    return values


def suite_mlp(seed: int = 0, **_) -> list[CheckResult]:
    start = time.perf_counter()
    records, _model = train_mlp(build_config(mlp_config(seed)))
    secs = time.perf_counter() - start
    ratio = records[-1].loss / records[0].loss
    return [
        _check("mlp/loss_ratio", ratio, 0.5, secs, f"epoch1 {records[0].loss:.4f} -> epoch10 {records[-1].loss:.4f}"),
        _check("mlp/max_residual", max(r.constraint_residual for r in records), TRAINING_RESIDUAL_TOL),
        _check("mlp/accuracy", records[-1].accuracy, 0.9, le=False),
        _budget("mlp", secs, 120.0),
    ]


# -- 6. Conv2d ------------------------------------------------------------------

def naive_conv2d(x, kernel, bias, stride, padding):
    """Direct nested-loop cross-correlation of (B, C, H, W) with (O, C, kh, kw)."""
    b, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((b, o, oh, ow))
    for n in range(b):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if bias is None else bias[f]
                    for ch in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[n, ch, i * stride + di, j * stride + dj] * kernel[f, ch, di, dj]
                    out[n, f, i, j] = acc
    return out


def random_geometry(rng):
    """Batch <= 3, channels <= 4, h, w <= 8, kernel <= 3, stride in {1, 2},
    padding in {0, 1}, restricted to integral output sizes."""
    while True:
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        kh, kw = (int(v) for v in rng.integers(1, 4, size=2))
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        if (h + 2 * pad - kh) >= 0 and (w + 2 * pad - kw) >= 0 \
                and (h + 2 * pad - kh) % stride == 0 and (w + 2 * pad - kw) % stride == 0:
            return dict(batch=int(rng.integers(1, 4)), cin=int(rng.integers(1, 5)), cout=int(rng.integers(1, 5)),
                        h=h, w=w, kh=kh, kw=kw, stride=stride, pad=pad)


def conv_vs_naive(geom, rng) -> float:
    layer = Conv2d(geom["cin"], geom["cout"], (geom["kh"], geom["kw"]), stride=geom["stride"],
                   padding=geom["pad"], rng=rng)
    x = rng.standard_normal((geom["batch"], geom["cin"], geom["h"], geom["w"]))
    g = Graph()
    layer.build(g, g.input("x", x.shape))
    got = g.forward({"x": x})
    want = naive_conv2d(x, layer.kernel, layer.bias.value, geom["stride"], geom["pad"])
    return float(np.max(np.abs(got - want)))


def stiefel_conv_training(seed: int = 0, steps: int = 100) -> float:
    """Largest matricized-weight residual over ``steps`` SGD steps of a small
    Stiefel-constrained conv net."""
    rng = np.random.default_rng(seed)
    conv = Conv2d(2, 4, 3, padding=1, weight_manifold="stiefel", rng=rng)
    model = Sequential(conv, ReLU(), Flatten(), Linear(4 * 6 * 6, 3, rng=rng), LogSoftmax(dim=1))
    x = rng.standard_normal((8, 2, 6, 6))
    y = rng.integers(0, 3, size=8)
    opt = SGD(model.parameters(), lr=1e-2, momentum=0.9)
    worst = conv.weight.manifold.residual(conv.weight.value)
    for _ in range(steps):
        opt.zero_grad()
        nll_graph(model, x, y).backward()
        opt.step()
        worst = max(worst, conv.weight.manifold.residual(conv.weight.value))
    return worst


def suite_conv(seed: int = 0, **_) -> list[CheckResult]:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    err = max(conv_vs_naive(random_geometry(rng), rng) for _ in range(25))
    residual = stiefel_conv_training(seed)
    secs = time.perf_counter() - start
    return [
        _check("conv/im2col_vs_naive", err, CONV_TOL),
        _check("conv/stiefel_residual_100_steps", residual, TRAINING_RESIDUAL_TOL),
        _budget("conv", secs, 30.0),
    ]


# -- 7. determinism -------------------------------------------------------------

def suite_determinism(seed: int = 0, out: Optional[str] = None, **_) -> list[CheckResult]:
    from .cli import main

    start = time.perf_counter()
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        tmp = Path(tmp)
        cfg_path = tmp / "run.cfg"
        cfg_path.write_text(
            "task = mlp_classify\n"
            "architecture.layers = 64, 32, 32, 32, 4\n"
            "architecture.manifold = stiefel\n"
            "optimizer = adagrad\n"
            "optimizer.lr = 0.01\n"
            "dataset = synthetic(4, 64, 512)\n"
            "epochs = 3\n"
        )
        codes = [main(["train", "--config", str(cfg_path), "--seed", str(seed), "--out", str(tmp / d)])
                 for d in ("a", "b")]
        same_metrics = (tmp / "a" / METRICS_FILE).read_bytes() == (tmp / "b" / METRICS_FILE).read_bytes()
        same_ckpt = (tmp / "a" / CHECKPOINT_FILE).read_bytes() == (tmp / "b" / CHECKPOINT_FILE).read_bytes()
    secs = time.perf_counter() - start
    return [
        _check("determinism/exit_codes", max(codes), 0),
        _check("determinism/metrics_identical", 0.0 if same_metrics else 1.0, 0.0, secs),
        _check("determinism/checkpoint_identical", 0.0 if same_ckpt else 1.0, 0.0),
    ]


SUITES: dict[str, Callable[..., list[CheckResult]]] = {
    "gradcheck": suite_gradcheck,
    "retraction": suite_retraction,
    "rayleigh": suite_rayleigh,
    "karcher": suite_karcher,
    "mlp": suite_mlp,
    "conv": suite_conv,
    "determinism": suite_determinism,
}


def run_suite(name: str, seed: int = 0, out: Optional[str] = None) -> list[CheckResult]:
    try:
        suite = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    return suite(seed=seed, out=out)
