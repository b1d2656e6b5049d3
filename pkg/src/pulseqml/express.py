"""Expressivity check on the operator sets that feed each monomial coefficient.

For a multi-index ``k`` the set ``S_k`` holds every ``L_w M`` whose word
``w`` uses encoding channel ``i`` exactly ``k[i]`` times (control letters are
unrestricted). It is built recursively: ``S_0`` is the closure of ``{M}``
under the control Liouvillians and ``S_k = closure(L_i S_{k - e_i})``.
If ``<psi0| B |psi0>`` vanishes on all of ``S_k`` then the ``x**k`` coefficient
of the model output is identically zero for every pulse schedule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import sim
from .lie import MaxDimExceeded
from .model import ModelSpec, PulseSchedule

DEFAULT_CUTOFF = 8
DEFAULT_TOL = 1e-8
_SPAN_TOL = 1e-10


@dataclass(frozen=True)
class OperatorSpan:
    """Real span of Hermitian operators, stored as an orthonormal basis ``(k, d, d)``."""

    basis: np.ndarray = field(repr=False)
    degree: tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def _vecs(self) -> np.ndarray:
        flat = self.basis.reshape(self.dim, -1)
        return np.concatenate([flat.real, flat.imag], axis=1)

    def residual_norm(self, op: np.ndarray) -> float:
        v = _vec(op)
        q = self._vecs()
        for _ in range(2):
            v = v - q.T @ (q @ v)
        return float(np.linalg.norm(v))

    def contains(self, op: np.ndarray, tol: float = 1e-8) -> bool:
        return self.residual_norm(op) <= tol * max(float(np.linalg.norm(op)), 1e-300)

    def same_span(self, other: "OperatorSpan", tol: float = 1e-8) -> bool:
        if self.dim != other.dim:
            return False
        return all(other.contains(b, tol) for b in self.basis) and all(self.contains(b, tol) for b in other.basis)


def _vec(op: np.ndarray) -> np.ndarray:
    flat = np.asarray(op, dtype=complex).ravel()
    return np.concatenate([flat.real, flat.imag])


class _Grower:
    def __init__(self, d: int, max_dim: Optional[int], tol: float):
        self.d = d
        self.q = np.zeros((0, 2 * d * d))
        self.max_dim = max_dim
        self.tol = tol

    def add(self, op: np.ndarray) -> Optional[np.ndarray]:
        v = _vec(op)
        nrm = np.linalg.norm(v)
        if nrm <= 1e-12:
            return None
        for _ in range(2):
            v = v - self.q.T @ (self.q @ v)
        rn = np.linalg.norm(v)
        if rn <= self.tol * nrm or rn <= 1e-10:
            return None
        if self.max_dim is not None and self.q.shape[0] >= self.max_dim:
            raise MaxDimExceeded(f"operator span would exceed dimension {self.max_dim}")
        v = v / rn
        self.q = np.vstack([self.q, v])
        half = v.size // 2
        return (v[:half] + 1j * v[half:]).reshape(self.d, self.d)

    def basis(self) -> np.ndarray:
        half = self.q.shape[1] // 2
        return (self.q[:, :half] + 1j * self.q[:, half:]).reshape(-1, self.d, self.d)


def submodule(
    seed: Sequence[np.ndarray],
    control_ops: Sequence[np.ndarray],
    tol: float = _SPAN_TOL,
    max_dim: Optional[int] = None,
    degree: tuple[int, ...] = (),
) -> OperatorSpan:
    """Smallest span containing ``seed`` and closed under ``X -> -i[H, X]`` for each control ``H``."""
    seed = [np.asarray(s, dtype=complex) for s in seed]
    if not seed:
        raise ValueError("submodule needs at least one seed operator (use a zero matrix for {0})")
    d = seed[0].shape[0]
    grow = _Grower(d, max_dim, tol)
    frontier = [b for b in (grow.add(s) for s in seed) if b is not None]
    while frontier:
        nxt = []
        for X in frontier:
            for h in control_ops:
                b = grow.add(sim.liouvillian(h, X))
                if b is not None:
                    nxt.append(b)
        frontier = nxt
    return OperatorSpan(grow.basis(), degree)


def multi_indices(m: int, cutoff: int):
    """All ``m``-tuples of non-negative integers with sum ``<= cutoff``, by total degree."""
    for total in range(cutoff + 1):
        for k in itertools.product(range(total + 1), repeat=m):
            if sum(k) == total:
                yield k


class SSets:
    """Memoized ``S_k`` spans for one model."""

    def __init__(self, spec: ModelSpec, tol: float = _SPAN_TOL, max_dim: Optional[int] = None):
        self.spec = spec
        self.tol = tol
        self.max_dim = max_dim if max_dim is not None else 4**spec.n
        ops = spec.channel_operators()
        self.encoding = ops[: spec.m]
        self.control = [h for h in ops[spec.m :] if np.any(h)]
        self._memo: dict[tuple[int, ...], OperatorSpan] = {}

    def __getitem__(self, k) -> OperatorSpan:
        k = tuple(int(v) for v in k)
        if len(k) != self.spec.m or min(k, default=0) < 0:
            raise ValueError(f"bad multi-index {k}")
        if k not in self._memo:
            i = next((i for i, v in enumerate(k) if v > 0), None)
            self._memo[k] = self._base() if i is None else self.via(k, i)
        return self._memo[k]

    def _base(self) -> OperatorSpan:
        zero = (0,) * self.spec.m
        return submodule([self.spec.observable], self.control, self.tol, self.max_dim, zero)

    def via(self, k: tuple[int, ...], i: int) -> OperatorSpan:
        """``S_k`` built from ``S_{k - e_i}``."""
        if k[i] == 0:
            raise ValueError(f"cannot step down index {i} of {k}")
        prev = list(k)
        prev[i] -= 1
        parent = self[tuple(prev)]
        d = self.spec.dim
        seeds = [sim.liouvillian(self.encoding[i], b) for b in parent.basis] or [np.zeros((d, d), complex)]
        return submodule(seeds, self.control, self.tol, self.max_dim, k)


def s_sets(spec: ModelSpec, cutoff: int, tol: float = _SPAN_TOL, max_dim: Optional[int] = None) -> dict[tuple[int, ...], OperatorSpan]:
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    table = SSets(spec, tol, max_dim)
    return {k: table[k] for k in multi_indices(spec.m, cutoff)}


def path_independent(spec: ModelSpec, k: Sequence[int], tol: float = 1e-8) -> bool:
    """True if every admissible last step ``i`` produces the same span ``S_k``."""
    table = SSets(spec)
    k = tuple(k)
    spans = [table.via(k, i) for i, v in enumerate(k) if v > 0]
    return all(spans[0].same_span(s, tol) for s in spans[1:])


def witness(span: OperatorSpan, rho: np.ndarray) -> float:
    """``max_j |Tr(rho B_j)|`` over the span's orthonormal basis."""
    if span.dim == 0:
        return 0.0
    vals = np.einsum("ij,bji->b", rho, span.basis)
    return float(np.max(np.abs(vals)))


@dataclass(frozen=True)
class ExpressivityRow:
    degrees: tuple[int, ...]
    dim: int
    witness: float
    passed: bool
    dyson: Optional[float] = None
    literal_passed: Optional[bool] = None


@dataclass(frozen=True)
class ExpressivityReport:
    cutoff: int
    tol: float
    rows: tuple[ExpressivityRow, ...]
    literal: bool = False

    @property
    def passed(self) -> bool:
        if self.literal:
            return all(r.literal_passed for r in self.rows)
        return all(r.passed for r in self.rows)

    def failures(self) -> list[tuple[int, ...]]:
        return [r.degrees for r in self.rows if not r.passed]

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "tol": self.tol,
            "passed": self.passed,
            "literal": self.literal,
            "rows": [
                {
                    "degrees": list(r.degrees),
                    "dim": r.dim,
                    "witness": r.witness,
                    "passed": r.passed,
                    "dyson": r.dyson,
                    "literal_passed": r.literal_passed,
                }
                for r in self.rows
            ],
        }

    def to_table(self) -> str:
        head = f"{'degrees':<16}{'dim':>5}{'witness':>14}  verdict"
        extra = any(r.dyson is not None for r in self.rows)
        if extra:
            head += f"{'|coef|':>14}"
        if self.literal:
            head += "  literal"
        lines = [head]
        for r in self.rows:
            line = f"{str(r.degrees):<16}{r.dim:>5}{r.witness:>14.3e}  {'pass' if r.passed else 'FAIL'}"
            if extra:
                line += f"{r.dyson:>14.3e}" if r.dyson is not None else f"{'':>14}"
            if self.literal:
                line += "  " + ("pass" if r.literal_passed else "FAIL")
            lines.append(line)
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _literal_ok(spec: ModelSpec, k: tuple[int, ...], max_len: int, tol: float) -> bool:
    """Every word with encoding counts ``k`` and length ``<= max_len`` gives a nonzero ``<psi0|L_w M|psi0>``."""
    ops = spec.channel_operators()
    control = list(range(spec.m, spec.n_channels))
    letters = [i for i, c in enumerate(k) for _ in range(c)]
    rho = spec.rho0
    for extra in range(max_len - len(letters) + 1):
        for ctrl in itertools.product(control, repeat=extra):
            for word in set(itertools.permutations(letters + list(ctrl))):
                X = spec.observable
                for j in reversed(word):
                    X = sim.liouvillian(ops[j], X)
                if abs(np.trace(rho @ X)) < tol:
                    return False
    return True


def _random_schedule(spec: ModelSpec, rng: np.random.Generator, T: float = 0.5, K: int = 5) -> ModelSpec:
    amps = rng.uniform(-1, 1, size=(spec.n_channels, K))
    sched = PulseSchedule(dt=T / K, amplitudes=amps, tunable=True)
    return spec.with_schedule(sched)


def check(
    spec: ModelSpec,
    cutoff: int = DEFAULT_CUTOFF,
    tol: float = DEFAULT_TOL,
    literal: bool = False,
    literal_extra: int = 2,
    dyson_crosscheck: Optional[bool] = False,
    seed: int = 0,
) -> ExpressivityReport:
    """Per multi-index verdict: pass iff some element of ``S_k`` has a nonvanishing expectation on ``psi0``.

    ``literal=True`` additionally requires every individual word (up to
    ``|k| + literal_extra`` letters) to give a nonzero value. The Dyson column,
    when enabled, is ``|coefficient of x**k|`` for a random short schedule with
    words up to ``|k| + 2`` letters. ``dyson_crosscheck=None`` enables it for
    models of at most 3 qubits.
    """
    if dyson_crosscheck is None:
        dyson_crosscheck = spec.n <= 3
    table = SSets(spec)
    rho = spec.rho0
    rng = np.random.default_rng(seed)
    probe = _random_schedule(spec, rng) if dyson_crosscheck else None
    rows = []
    for k in multi_indices(spec.m, cutoff):
        span = table[k]
        w = witness(span, rho)
        coef = None
        if probe is not None:
            coef = abs(sim.monomial_coefficient(probe, k, sum(k) + 2))
        lit = _literal_ok(spec, k, sum(k) + literal_extra, tol) if literal else None
        rows.append(ExpressivityRow(k, span.dim, w, w >= tol, coef, lit))
    return ExpressivityReport(cutoff, tol, tuple(rows), literal)
