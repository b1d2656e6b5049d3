"""Supervised fitting of pulse amplitudes and the output scale.

The loss is the mean squared error between ``scale * f(x)`` and the targets.
Gradients with respect to every sub-pulse amplitude come from one forward
and one backward sweep over the segments, differentiating each segment
propagator in its eigenbasis.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import sim
from .model import ModelSpec

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.targets, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def N(self) -> int:
        return self.targets.shape[0]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def check_domain(self, domain: np.ndarray, tol: float = 1e-12) -> None:
        lo, hi = domain[:, 0] - tol, domain[:, 1] + tol
        if np.any(self.inputs < lo) or np.any(self.inputs > hi):
            raise ValueError("dataset inputs fall outside the model domain")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.m)] + ["y"])
            for x, y in zip(self.inputs, self.targets):
                w.writerow([f"{v:.17g}" for v in x] + [f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[-1].strip() != "y" or not all(h.strip().startswith("x") for h in header[:-1]):
            raise ValueError(f"{path}: header must be x1,...,xm,y")
        data = np.array(body, dtype=float).reshape(-1, len(header))
        return cls(data[:, :-1], data[:, -1])


def eq14(x):
    x = np.asarray(x, dtype=float)
    return 2 * x + 3 * x**2 + x**3 + 10 * x**6 + 8 * x**7 - 3 * x**9 + 5 * x**10 - 13 * x**12


def eq17(x1, x2):
    return (x1**2 + x2 - 3) ** 2 + (x1 + x2**2 - 1) ** 2


BUILTIN_TARGETS: dict[str, tuple[int, Callable]] = {"eq14": (1, eq14), "eq17": (2, eq17)}


def _expression_target(expr: str) -> tuple[int, Callable]:
    import sympy

    try:
        parsed = sympy.sympify(expr)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"invalid target expression {expr!r}: {exc}") from exc
    names = sorted(str(s) for s in parsed.free_symbols)
    if names == ["x"]:
        syms = [sympy.Symbol("x")]
    else:
        m = len(names)
        syms = [sympy.Symbol(f"x{i + 1}") for i in range(m)]
        if set(names) - {str(s) for s in syms}:
            raise ValueError(f"target expression may only use x or x1..xm, got {names}")
    fn = sympy.lambdify(syms, parsed, "numpy")
    return len(syms), fn


def make_dataset(target: Union[str, Callable], points: Union[int, Sequence[int]] = 200, domain=None, m: Optional[int] = None) -> Dataset:
    """Evenly spaced inclusive grid (tensor product for several inputs) with exact targets.

    ``target`` is ``"eq14"``, ``"eq17"``, an expression in ``x`` or ``x1..xm``,
    or a callable taking one array per input.
    """
    if isinstance(target, str):
        m_t, fn = BUILTIN_TARGETS[target] if target in BUILTIN_TARGETS else _expression_target(target)
    else:
        m_t, fn = (m or 1), target
    pts = [points] * m_t if np.isscalar(points) else list(points)
    if len(pts) != m_t or min(pts) < 1:
        raise ValueError(f"grid spec {points!r} does not fit {m_t} inputs")
    dom = np.tile([-1.0, 1.0], (m_t, 1)) if domain is None else np.asarray(domain, float).reshape(m_t, 2)
    axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(dom, pts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([g.ravel() for g in mesh], axis=1)
    y = np.broadcast_to(np.asarray(fn(*X.T), dtype=float), (X.shape[0],))
    return Dataset(X, y.copy())


# ---------------------------------------------------------------------------
# loss and gradient


def loss(spec: ModelSpec, data: Dataset) -> float:
    if data.N == 0:
        raise ValueError("empty dataset")
    f = sim.measure_batch(spec, data.inputs)
    return float(np.mean((spec.scale * f - data.targets) ** 2))


def _forward_backward(spec: ModelSpec, X: np.ndarray, amps: np.ndarray):
    """Outputs ``f`` and ``df/da`` of shape ``(N, C, K)`` for every sample."""
    ops = spec.channel_operators()
    dt = spec.schedule.dt
    coefs = sim._coefficients(spec, X, amps)
    N, K, C = coefs.shape
    d = spec.dim
    h = (coefs.reshape(N * K, C) @ ops.reshape(C, d * d)).reshape(N, K, d, d)
    lam, V = np.linalg.eigh(h)
    Vh = np.conj(np.swapaxes(V, -1, -2))
    U = (V * np.exp(-1j * dt * lam)[..., None, :]) @ Vh

    psi = np.empty((N, K + 1, d, 1), dtype=complex)
    psi[:, 0, :, 0] = spec.initial_state
    for k in range(K):
        psi[:, k + 1] = U[:, k] @ psi[:, k]
    last = psi[:, K, :, 0]
    f = np.einsum("ni,ij,nj->n", last.conj(), spec.observable, last).real

    # chi_k = (U_K ... U_{k+1})^dag M psi_K, stored as row vectors
    chi = np.empty((N, K, 1, d), dtype=complex)
    c = (last @ spec.observable.T)[:, None, :].conj()
    for k in range(K - 1, -1, -1):
        chi[:, k] = c
        c = c @ U[:, k]

    # d exp(-i H dt) = V (Phi o (V^dag (-i dt dH) V)) V^dag with
    # Phi_ab = exp(-i (l_a + l_b) dt / 2) sinc((l_a - l_b) dt / 2)
    la, lb = lam[..., :, None], lam[..., None, :]
    phi = np.exp(-0.5j * dt * (la + lb)) * np.sinc((la - lb) * dt / (2 * np.pi))
    chit = chi @ V  # (N, K, 1, d) = (V^dag chi)^dag
    psit = Vh @ psi[:, :K]  # (N, K, d, 1)
    G = np.swapaxes(chit, -1, -2) * phi * np.swapaxes(psit, -1, -2)
    R = V.conj() @ G @ np.swapaxes(V, -1, -2)
    # dF = 2 Re <chi| dU psi> with dU from dH = w_c H_c
    s = (R.reshape(N * K, d * d) @ ops.reshape(C, d * d).T).reshape(N, K, C)
    w = np.concatenate([X, np.ones((N, spec.p))], axis=1)[:, None, :]
    grad = 2 * dt * w * s.imag
    return f, np.swapaxes(grad, 1, 2)


def value_and_grad(spec: ModelSpec, data: Dataset, chunk: int = 256) -> tuple[float, np.ndarray, float]:
    """Loss, ``dL/d amplitudes`` (zero on frozen entries) and ``dL/d scale``."""
    if data.N == 0:
        raise ValueError("empty dataset")
    amps = spec.schedule.amplitudes
    s = spec.scale
    N = data.N
    g_amp = np.zeros_like(amps)
    g_scale = 0.0
    total = 0.0
    if spec.schedule.K == 0:
        f = sim.measure_batch(spec, data.inputs)
        r = s * f - data.targets
        return float(np.mean(r**2)), g_amp, float(2 * np.mean(r * f))
    for i in range(0, N, chunk):
        X = data.inputs[i : i + chunk]
        y = data.targets[i : i + chunk]
        f, df = _forward_backward(spec, X, amps)
        r = s * f - y
        total += float(np.sum(r**2))
        g_amp += np.einsum("n,nck->ck", (2 / N) * r * s, df)
        g_scale += float(np.sum((2 / N) * r * f))
    g_amp = np.where(spec.schedule.tunable, g_amp, 0.0)
    return total / N, g_amp, g_scale


def gradient(spec: ModelSpec, data: Dataset, backend: str = "exact", step: float = 1e-5) -> tuple[np.ndarray, float]:
    """``(dL/d amplitudes, dL/d scale)``; frozen amplitudes get zero."""
    if backend == "exact":
        _, ga, gs = value_and_grad(spec, data)
        return ga, gs
    if backend not in ("fd", "finite-difference"):
        raise ValueError(f"unknown gradient backend {backend!r}")
    return _fd_gradient(spec, data, step)


def _fd_gradient(spec: ModelSpec, data: Dataset, step: float) -> tuple[np.ndarray, float]:
    sched = spec.schedule
    base = sched.amplitudes
    g = np.zeros_like(base)
    for c, k in zip(*np.nonzero(sched.tunable)):
        plus = base.copy()
        plus[c, k] += step
        minus = base.copy()
        minus[c, k] -= step
        lp = loss(spec.with_schedule(sched.with_amplitudes(plus)), data)
        lm = loss(spec.with_schedule(sched.with_amplitudes(minus)), data)
        g[c, k] = (lp - lm) / (2 * step)
    gs = (loss(spec.with_scale(spec.scale + step), data) - loss(spec.with_scale(spec.scale - step), data)) / (2 * step)
    return g, gs


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, lr: float = 0.05, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    max_iters: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    backend: str = "exact"
    target_loss: float = 0.0
    seed: int = 0
    init_range: float = 0.5
    init: bool = True
    train_scale: bool = True
    divergence: float = 1e6
    log_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.backend not in ("exact", "fd", "finite-difference"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class TrainRecord:
    losses: np.ndarray
    spec: ModelSpec = field(repr=False)
    final_loss: float
    converged: bool
    iterations: int
    wall_time: float

    @property
    def scale(self) -> float:
        return self.spec.scale

    @property
    def schedule(self):
        return self.spec.schedule


def init_pulses(spec: ModelSpec, seed: int, half_width: float = 0.5) -> ModelSpec:
    """Tunable amplitudes drawn i.i.d. uniform on ``[-half_width, half_width]``."""
    rng = np.random.default_rng(seed)
    amps = rng.uniform(-half_width, half_width, size=spec.schedule.amplitudes.shape)
    return spec.with_schedule(spec.schedule.with_amplitudes(amps))


def fit(spec: ModelSpec, data: Dataset, cfg: TrainConfig = TrainConfig(), callback=None) -> TrainRecord:
    """Adam on all tunable amplitudes plus the scale until ``max_iters`` or ``loss <= target_loss``."""
    if data.N == 0:
        raise ValueError("empty dataset")
    if data.m != spec.m:
        raise ValueError(f"dataset has {data.m} inputs, model expects {spec.m}")
    data.check_domain(spec.domain)
    if cfg.init:
        spec = init_pulses(spec, cfg.seed, cfg.init_range)
    sched = spec.schedule
    mask = sched.tunable
    bounds = sched.bounds
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    params = np.concatenate([sched.amplitudes[mask], [spec.scale]])
    losses = []
    start = time.perf_counter()
    converged = False

    def unpack(p):
        amps = sched.amplitudes.copy()
        amps[mask] = p[:-1]
        return spec.with_schedule(sched.with_amplitudes(amps)).with_scale(p[-1])

    current = spec
    for it in range(cfg.max_iters):
        if cfg.backend == "exact":
            value, ga, gs = value_and_grad(current, data)
        else:
            value = loss(current, data)
            ga, gs = _fd_gradient(current, data, 1e-5)
        if not np.isfinite(value) or value > cfg.divergence:
            raise TrainingDiverged(f"loss {value!r} at iteration {it}")
        losses.append(value)
        if callback is not None:
            callback(it, value, current)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.6g", it, value)
        if value <= cfg.target_loss:
            converged = True
            break
        grad = np.concatenate([ga[mask], [gs if cfg.train_scale else 0.0]])
        params = opt.step(params, grad)
        if bounds is not None:
            lo = np.broadcast_to(bounds[:, :1], mask.shape)[mask]
            hi = np.broadcast_to(bounds[:, 1:], mask.shape)[mask]
            params[:-1] = np.clip(params[:-1], lo, hi)
        current = unpack(params)
    final = loss(current, data)
    converged = converged or final <= cfg.target_loss
    return TrainRecord(
        losses=np.array(losses),
        spec=current,
        final_loss=final,
        converged=converged,
        iterations=len(losses),
        wall_time=time.perf_counter() - start,
    )


def odd_part_floor(data: Dataset, fn: Callable = eq14) -> float:
    """Mean square of the odd part of a univariate target over the dataset grid."""
    x = data.inputs[:, 0]
    odd = (fn(x) - fn(-x)) / 2
    return float(np.mean(odd**2))


def fitted_curve(spec: ModelSpec, X) -> np.ndarray:
    return spec.scale * sim.measure_batch(spec, X)
