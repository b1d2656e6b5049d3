"""Time evolution, measurement and the truncated Dyson series.

Exact evolution multiplies one propagator ``exp(-i H_s dt)`` per segment.
The Dyson engine expands ``rho(T)`` over words ``(j1, ..., jn)`` of channel
indices::

    rho(T) ~ sum_w c_w(theta) * prod(x_j for encoding letters) * L_j1 L_j2 ... L_jn rho0

with ``L_j X = -i [H_j, X]`` and ``c_w`` the chronological iterated integral
``int_0^T theta_j1(t1) int_0^t1 theta_j2(t2) ... dt``. ``L_jn`` acts first.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import linop
from .model import ModelSpec, PulseSchedule

MAX_ORDER = 8
MAX_WORDS = 10**6
_CHUNK = 64


class WordOverflow(RuntimeError):
    """Word enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _batch(spec: ModelSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and spec.m == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != spec.m:
        raise ValueError(f"inputs must have shape (N, {spec.m}), got {X.shape}")
    return X


def _coefficients(spec: ModelSpec, X: np.ndarray, amplitudes: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-sample, per-segment channel coefficients, shape ``(N, K, C)``."""
    amps = spec.schedule.amplitudes if amplitudes is None else amplitudes
    X = _batch(spec, X)
    w = np.concatenate([X, np.ones((X.shape[0], spec.p))], axis=1)
    return w[:, None, :] * amps.T[None, :, :]


def _propagate(ops: np.ndarray, coefs: np.ndarray, psi: np.ndarray, dt: float, keep: bool = False):
    """Apply segment propagators for ``coefs`` of shape ``(N, K, C)`` to states ``psi`` ``(N, d)``."""
    N, K, _ = coefs.shape
    psi = np.array(psi, dtype=complex)
    history = [psi.copy()] if keep else None
    for start in range(0, K, _CHUNK):
        h = np.einsum("nkc,cij->nkij", coefs[:, start : start + _CHUNK], ops)
        U = linop.propagator(h, dt)
        for s in range(U.shape[1]):
            psi = np.einsum("nij,nj->ni", U[:, s], psi)
            if keep:
                history.append(psi.copy())
    return psi, history


def evolve(spec: ModelSpec, x) -> Trajectory:
    sched = spec.schedule
    coefs = _coefficients(spec, np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    _, hist = _propagate(spec.channel_operators(), coefs, spec.initial_state[None, :], sched.dt, keep=True)
    return Trajectory(times=sched.times, states=np.array([h[0] for h in hist]))


def final_states(spec: ModelSpec, X, amplitudes: Optional[np.ndarray] = None) -> np.ndarray:
    """Final states for a batch of inputs ``X`` of shape ``(N, m)``."""
    coefs = _coefficients(spec, X, amplitudes)
    psi0 = np.broadcast_to(spec.initial_state, (coefs.shape[0], spec.dim))
    psi, _ = _propagate(spec.channel_operators(), coefs, psi0, spec.schedule.dt)
    return psi


def expectation(states: np.ndarray, observable: np.ndarray) -> np.ndarray:
    return np.einsum("ni,ij,nj->n", states.conj(), observable, states).real


def measure(spec: ModelSpec, x) -> float:
    """Expectation value of the observable on the final state (unscaled)."""
    x = np.asarray(x, dtype=float).reshape(1, spec.m)
    return float(measure_batch(spec, x)[0])


def measure_batch(spec: ModelSpec, X, amplitudes: Optional[np.ndarray] = None) -> np.ndarray:
    X = _batch(spec, X)
    return expectation(final_states(spec, X, amplitudes), spec.observable)


def measure_schedules(spec: ModelSpec, x, amplitude_sets: np.ndarray) -> np.ndarray:
    """Outputs at fixed ``x`` for a stack of amplitude arrays ``(B, C, K)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = spec.channel_weights(x)
    coefs = np.swapaxes(amplitude_sets, 1, 2) * w[None, None, :]
    psi0 = np.broadcast_to(spec.initial_state, (coefs.shape[0], spec.dim))
    psi, _ = _propagate(spec.channel_operators(), coefs, psi0, spec.schedule.dt)
    return expectation(psi, spec.observable)


# ---------------------------------------------------------------------------
# iterated integrals


@dataclass(frozen=True)
class PiecewisePoly:
    """Piecewise polynomial on ``[breaks[k], breaks[k+1]]`` in the local variable ``t - breaks[k]``.

    ``coeffs[k, i]`` multiplies ``(t - breaks[k])**i``.
    """

    breaks: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def constant(cls, breaks: np.ndarray, value: float = 1.0) -> "PiecewisePoly":
        return cls(np.asarray(breaks, float), np.full((len(breaks) - 1, 1), float(value)))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def end_values(self) -> np.ndarray:
        """Value of each piece at its right breakpoint."""
        h = np.diff(self.breaks)
        return np.polynomial.polynomial.polyval(h, self.coeffs.T, tensor=False)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, len(self.breaks) - 2)
        tau = t - self.breaks[k]
        return np.sum(self.coeffs[k] * tau[..., None] ** np.arange(self.coeffs.shape[1]), axis=-1)

    def integrate_against(self, amplitudes: np.ndarray) -> "PiecewisePoly":
        """``t -> int_0^t a(s) p(s) ds`` for a piecewise-constant ``a`` on the same segments."""
        K = len(self.breaks) - 1
        a = np.asarray(amplitudes, dtype=float)
        deg = self.coeffs.shape[1]
        powers = np.arange(1, deg + 1)
        new = np.zeros((K, deg + 1))
        new[:, 1:] = a[:, None] * self.coeffs / powers
        h = np.diff(self.breaks)
        increments = np.polynomial.polynomial.polyval(h, new.T, tensor=False)
        new[:, 0] = np.concatenate([[0.0], np.cumsum(increments)[:-1]])
        return PiecewisePoly(self.breaks, new)

    def value_at_end(self) -> float:
        if len(self.breaks) < 2:
            return float(self.coeffs[0, 0]) if self.coeffs.size else 0.0
        return float(self.end_values()[-1])

    def continuity_error(self) -> float:
        if self.coeffs.shape[0] < 2:
            return 0.0
        return float(np.max(np.abs(self.end_values()[:-1] - self.coeffs[1:, 0])))


def iterated_integral(schedule: PulseSchedule, word: Sequence[int]) -> float:
    """``int_0^T theta_w1(t1) int_0^t1 theta_w2(t2) ... dt`` evaluated exactly."""
    if schedule.K == 0:
        return 1.0 if len(word) == 0 else 0.0
    poly = PiecewisePoly.constant(schedule.times)
    for j in reversed(tuple(word)):
        if not 0 <= j < schedule.n_channels:
            raise IndexError(f"word letter {j} is not a channel")
        poly = poly.integrate_against(schedule.amplitudes[j])
    return poly.value_at_end()


# ---------------------------------------------------------------------------
# Dyson engine


def liouvillian(h: np.ndarray, X: np.ndarray) -> np.ndarray:
    return -1j * (h @ X - X @ h)


def _count_words(channels: int, order: int) -> int:
    return sum(channels**k for k in range(order + 1))


def _walk(spec: ModelSpec, order: int, seed: np.ndarray, max_words: int, allowed=None) -> Iterator[tuple[tuple[int, ...], float, np.ndarray]]:
    """Depth-first over words of length ``<= order``, yielding ``(word, c_w, L_w seed)``.

    Words grow by prepending, which extends both the iterated integral and the
    operator product by one outer layer. ``allowed(word)`` may prune subtrees.
    """
    C = spec.n_channels
    if _count_words(C, order) > max_words and allowed is None:
        raise WordOverflow(f"{_count_words(C, order)} words exceed cap {max_words}")
    ops = spec.channel_operators()
    sched = spec.schedule
    amps = sched.amplitudes
    root = PiecewisePoly.constant(sched.times) if sched.K else None
    stack = [((), root, seed)]
    visited = 0
    while stack:
        word, poly, X = stack.pop()
        visited += 1
        if visited > max_words:
            raise WordOverflow(f"word enumeration exceeded cap {max_words}")
        c = 1.0 if not word else (poly.value_at_end() if poly is not None else 0.0)
        yield word, c, X
        if len(word) == order:
            continue
        for j in range(C):
            nxt = (j,) + word
            if allowed is not None and not allowed(nxt):
                continue
            p2 = poly.integrate_against(amps[j]) if poly is not None else None
            stack.append((nxt, p2, liouvillian(ops[j], X)))


def _word_weight(spec: ModelSpec, word: tuple[int, ...], x: np.ndarray) -> float:
    w = 1.0
    for j in word:
        if j < spec.m:
            w *= x[j]
    return w


def dyson_truncated(spec: ModelSpec, x, order: int, max_order: int = MAX_ORDER, max_words: int = MAX_WORDS) -> np.ndarray:
    """Density matrix ``rho(T)`` from the Dyson series truncated at word length ``order``."""
    if order > max_order:
        raise ValueError(f"order {order} exceeds configured max {max_order}")
    _orientation_selftest()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rho = np.zeros((spec.dim, spec.dim), dtype=complex)
    for word, c, X in _walk(spec, order, spec.rho0, max_words):
        rho += c * _word_weight(spec, word, x) * X
    return rho


def monomial_coefficient(spec: ModelSpec, degrees: Sequence[int], max_word_len: int, max_words: int = MAX_WORDS) -> float:
    """Coefficient of ``prod x_k**degrees[k]`` in ``f(x)``, summed over words up to ``max_word_len``.

    Uses ``Tr(M L_w1 ... L_wn rho0)``, i.e. the same ordering as ``dyson_truncated``.
    """
    degrees = tuple(int(k) for k in degrees)
    if len(degrees) != spec.m:
        raise ValueError(f"need {spec.m} degrees, got {len(degrees)}")
    if sum(degrees) > max_word_len:
        raise ValueError("total degree exceeds the word-length cutoff")
    _orientation_selftest()

    def counts(word):
        return [sum(1 for j in word if j == k) for k in range(spec.m)]

    def allowed(word):
        cnt = counts(word)
        if any(c > d for c, d in zip(cnt, degrees)):
            return False
        return len(word) + sum(d - c for c, d in zip(cnt, degrees)) <= max_word_len

    total = 0.0
    for word, c, X in _walk(spec, max_word_len, spec.rho0, max_words, allowed=allowed):
        if counts(word) == list(degrees):
            total += c * float(np.real(np.trace(spec.observable @ X)))
    return total


@functools.lru_cache(maxsize=None)
def _orientation_selftest() -> bool:
    """Check that ``L_j1`` (latest time) is applied last by comparing second-order truncations."""
    from .model import HamiltonianTerm, ModelSpec as _MS

    terms = (
        HamiltonianTerm("control", 0, linop.SX.copy()),
        HamiltonianTerm("control", 1, linop.SZ.copy()),
    )
    sched = PulseSchedule(dt=0.01, amplitudes=[[1.0, 0.0], [0.0, 1.0]], tunable=True)
    spec = _MS(n=1, m=0, terms=terms, initial_state=np.array([1, 0], complex), observable=linop.SZ.copy(), schedule=sched)
    exact = final_states(spec, np.zeros((1, 0)))[0]
    rho_exact = np.outer(exact, exact.conj())
    ops = spec.channel_operators()
    r0 = spec.rho0
    fwd = rev = np.zeros_like(r0)
    for word in itertools.chain([()], itertools.product(range(2), repeat=1), itertools.product(range(2), repeat=2)):
        c = iterated_integral(sched, word)
        X = Y = r0
        for j in reversed(word):
            X = liouvillian(ops[j], X)
        for j in word:
            Y = liouvillian(ops[j], Y)
        fwd = fwd + c * X
        rev = rev + c * Y
    e_fwd = np.linalg.norm(fwd - rho_exact)
    e_rev = np.linalg.norm(rev - rho_exact)
    if not e_fwd < 0.1 * e_rev:
        raise AssertionError(f"Dyson orientation self-test failed: {e_fwd:.3e} vs reversed {e_rev:.3e}")
    return True
