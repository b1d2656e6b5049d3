"""Dynamical Lie algebras: closure, ideal decomposition and the variance formula.

Algebras are real spans of anti-Hermitian matrices. A Hermitian generator
``H`` enters as ``iH``. Bases are orthonormal for ``Re Tr(A^dagger B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import sim
from .model import ModelSpec

DEFAULT_TOL = 1e-10
# absolute floor on residual norms of candidates built from unit-norm elements
_ABS_FLOOR = 1e-8


class MaxDimExceeded(RuntimeError):
    """Span grew past ``max_dim``."""


class DecompositionUnstable(RuntimeError):
    """Two independently seeded splittings disagree on block dimensions."""


def _to_real(mats: np.ndarray) -> np.ndarray:
    flat = mats.reshape(mats.shape[0], -1)
    return np.concatenate([flat.real, flat.imag], axis=1)


def _from_real(vecs: np.ndarray, d: int) -> np.ndarray:
    half = vecs.shape[1] // 2
    return (vecs[:, :half] + 1j * vecs[:, half:]).reshape(-1, d, d)


@dataclass(frozen=True)
class LieBasis:
    elements: np.ndarray = field(repr=False)
    provenance: tuple = ()

    @property
    def dim(self) -> int:
        return self.elements.shape[0]

    @property
    def size(self) -> int:
        """Matrix dimension ``d`` of the representation."""
        return self.elements.shape[1] if self.dim else 0

    def gram(self) -> np.ndarray:
        v = _to_real(self.elements)
        return v @ v.T

    def contains(self, a: np.ndarray, tol: float = 1e-8) -> bool:
        """True if anti-Hermitian ``a`` lies in the span within ``tol`` (relative)."""
        v = _to_real(np.asarray(a)[None])[0]
        q = _to_real(self.elements) if self.dim else np.zeros((0, v.size))
        r = v - q.T @ (q @ v)
        return bool(np.linalg.norm(r) <= tol * max(np.linalg.norm(v), 1e-300))


class _Span:
    """Incrementally grown real orthonormal basis of flattened vectors."""

    def __init__(self, width: int, max_dim: Optional[int], tol: float):
        self.q = np.zeros((0, width))
        self.max_dim = max_dim
        self.tol = tol

    def residual(self, v: np.ndarray) -> np.ndarray:
        for _ in range(2):
            v = v - self.q.T @ (self.q @ v)
        return v

    def add(self, v: np.ndarray) -> bool:
        nrm = np.linalg.norm(v)
        if nrm <= _ABS_FLOOR:
            return False
        r = self.residual(v)
        rn = np.linalg.norm(r)
        if rn <= self.tol * nrm or rn <= _ABS_FLOOR:
            return False
        if self.max_dim is not None and self.q.shape[0] >= self.max_dim:
            raise MaxDimExceeded(f"span dimension would exceed {self.max_dim}")
        self.q = np.vstack([self.q, r / rn])
        return True


def closure(generators: Sequence[np.ndarray], tol: float = DEFAULT_TOL, max_dim: Optional[int] = None) -> LieBasis:
    """Orthonormal basis of the real Lie algebra generated by ``{i H_k}``."""
    gens = [1j * np.asarray(h, dtype=complex) for h in generators]
    if not gens:
        return LieBasis(np.zeros((0, 0, 0), dtype=complex))
    d = gens[0].shape[0]
    if any(g.shape != (d, d) for g in gens):
        raise ValueError("generators must share one square shape")
    if max_dim is not None and max_dim < len(gens):
        raise ValueError("max_dim must be at least the number of generators")
    span = _Span(2 * d * d, max_dim, tol)
    prov: list = []
    for k, g in enumerate(gens):
        if span.add(_to_real(g[None])[0]):
            prov.append(("generator", k))
    mats = list(_from_real(span.q, d))
    done = 0
    while done < len(mats):
        b = mats[done]
        for i in range(done):
            c = mats[i] @ b - b @ mats[i]
            if span.add(_to_real(c[None])[0]):
                mats.append(_from_real(span.q[-1:], d)[0])
                prov.append(("commutator", i, done))
        done += 1
    return LieBasis(np.array(mats), tuple(prov))


def is_closed(basis: LieBasis, tol: float = 1e-8) -> bool:
    B = basis.elements
    for i in range(basis.dim):
        for j in range(i + 1, basis.dim):
            c = B[i] @ B[j] - B[j] @ B[i]
            if np.linalg.norm(c) > _ABS_FLOOR and not basis.contains(c, tol):
                return False
    return True


# ---------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True)
class LieDecomposition:
    center: LieBasis
    ideals: tuple[LieBasis, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.dim for b in self.ideals)

    @property
    def dim(self) -> int:
        return self.center.dim + sum(self.dims)


def structure_constants(basis: LieBasis) -> np.ndarray:
    """``ad[a][c, b] = <B_c, [B_a, B_b]>`` in the orthonormal basis; each ``ad[a]`` is antisymmetric."""
    B = basis.elements
    prod = np.einsum("aij,bjk->abik", B, B)
    comm = prod - np.swapaxes(prod, 0, 1)
    vb = _to_real(B)
    vc = _to_real(comm.reshape(-1, *B.shape[1:])).reshape(basis.dim, basis.dim, -1)
    return np.einsum("cv,abv->acb", vb, vc)


def _common_kernel(ad: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormal columns spanning ``{v : ad[a] v = 0 for all a}``."""
    dim = ad.shape[0]
    gram = np.einsum("acb,acd->bd", ad, ad)
    w, v = np.linalg.eigh(gram)
    top = max(float(w[-1]), 1e-300) if dim else 1.0
    # eigenvalues of the Gram matrix are squared singular values
    return v[:, w <= (tol**2) * top]


def _complement(sub: np.ndarray, within: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning ``within`` minus ``sub`` (both have orthonormal columns)."""
    if sub.shape[1] == 0:
        return within
    proj = within - sub @ (sub.T @ within)
    u, s, _ = np.linalg.svd(proj, full_matrices=False)
    k = within.shape[1] - sub.shape[1]
    return u[:, :k]


def _ideal_generated(v: np.ndarray, ad: np.ndarray, tol: float) -> np.ndarray:
    """Smallest ad-invariant subspace containing ``v`` (coordinates), as orthonormal columns."""
    span = _Span(v.size, None, tol)
    span.add(v)
    frontier = span.q.copy()
    while frontier.shape[0]:
        new = []
        imgs = np.einsum("acb,kb->kac", ad, frontier).reshape(-1, v.size)
        for w in imgs:
            if span.add(w):
                new.append(span.q[-1])
        frontier = np.array(new) if new else np.zeros((0, v.size))
    return span.q.T


def _split(block: np.ndarray, ad: np.ndarray, rng: np.random.Generator, tol: float) -> list[np.ndarray]:
    """Recursively split an ideal (orthonormal coordinate columns) into minimal ideals."""
    dim = block.shape[1]
    if dim <= 1:
        return [block]
    h = block @ rng.standard_normal(dim)
    adh = np.tensordot(h, ad, axes=1)
    local = block.T @ adh @ block
    w, u = np.linalg.eigh(1j * local)
    scale = np.max(np.abs(w))
    nonzero = np.flatnonzero(np.abs(w) > 1e-6 * scale)
    if nonzero.size == 0:
        return [block]
    # root vector with the most isolated eigenvalue lies in a single simple ideal
    gaps = [np.min(np.abs(np.delete(w, k) - w[k])) for k in nonzero]
    k = nonzero[int(np.argmax(gaps))]
    vec = u[:, k]
    v = vec.real if np.linalg.norm(vec.real) >= np.linalg.norm(vec.imag) else vec.imag
    sub = _ideal_generated(block @ v, ad, tol)
    if sub.shape[1] >= dim:
        return [block]
    rest = _complement(sub, block)
    return _split(sub, ad, rng, tol) + _split(rest, ad, rng, tol)


def _decompose_once(basis: LieBasis, ad: np.ndarray, seed: int, tol: float):
    dim = basis.dim
    # center: v with [B_a, v] = 0 for all a, i.e. ad[a] @ v = 0
    center = _common_kernel(ad, 1e-6) if dim else np.zeros((0, 0))
    semi = _complement(center, np.eye(dim))
    blocks = _split(semi, ad, np.random.default_rng(seed), tol) if semi.shape[1] else []
    blocks.sort(key=lambda b: b.shape[1])
    return center, blocks


def decompose(basis: LieBasis, tol: float = DEFAULT_TOL, seed: int = 0) -> LieDecomposition:
    """Split into center plus simple ideals; two seeded runs must agree on block sizes."""
    ad = structure_constants(basis)
    c1, b1 = _decompose_once(basis, ad, seed, tol)
    c2, b2 = _decompose_once(basis, ad, seed + 1, tol)
    dims1 = sorted(b.shape[1] for b in b1)
    dims2 = sorted(b.shape[1] for b in b2)
    if c1.shape[1] != c2.shape[1] or dims1 != dims2:
        raise DecompositionUnstable(f"block dimensions differ between seeds: {dims1} vs {dims2}")

    def realize(cols: np.ndarray, label: str) -> LieBasis:
        mats = np.einsum("ab,aij->bij", cols, basis.elements) if cols.size else np.zeros((0,) + basis.elements.shape[1:], complex)
        return LieBasis(mats, (label,))

    ideals = tuple(realize(b, f"ideal{k}") for k, b in enumerate(b1))
    return LieDecomposition(center=realize(c1, "center"), ideals=ideals)


# ---------------------------------------------------------------------------
# projections and variance


def project_norm2(block: LieBasis, h: np.ndarray) -> float:
    """Squared HS norm of the projection of ``i h`` onto the block: ``sum_j |Tr(B_j^dagger i h)|^2``."""
    h = np.asarray(h, dtype=complex)
    if block.dim == 0:
        return 0.0
    if h.shape != block.elements.shape[1:]:
        raise ValueError(f"operator shape {h.shape} does not match algebra {block.elements.shape[1:]}")
    coeffs = np.einsum("bij,ij->b", block.elements.conj(), 1j * h)
    return float(np.sum(np.abs(coeffs) ** 2))


@dataclass(frozen=True)
class IdealRow:
    dim: int
    p_rho: float
    p_obs: float

    @property
    def contribution(self) -> float:
        return self.p_rho * self.p_obs / self.dim


@dataclass(frozen=True)
class VarianceReport:
    rows: tuple[IdealRow, ...]
    center_dim: int
    rho_in_algebra: bool
    obs_in_algebra: bool

    @property
    def total(self) -> float:
        return float(sum(r.contribution for r in self.rows))

    @property
    def hypothesis_holds(self) -> bool:
        return self.rho_in_algebra or self.obs_in_algebra

    def to_text(self) -> str:
        lines = ["ideal,dim,P_rho,P_M,contribution"]
        for k, r in enumerate(self.rows):
            lines.append(f"{k},{r.dim},{r.p_rho:.17g},{r.p_obs:.17g},{r.contribution:.17g}")
        lines.append(f"# center_dim={self.center_dim}")
        lines.append(f"# rho_in_algebra={self.rho_in_algebra} observable_in_algebra={self.obs_in_algebra}")
        lines.append(f"# variance={self.total:.17g}")
        return "\n".join(lines)


def _in_algebra(dec: LieDecomposition, h: np.ndarray, traceless: bool, tol: float = 1e-8) -> bool:
    h = np.asarray(h, dtype=complex)
    if traceless:
        h = h - np.trace(h) / h.shape[0] * np.eye(h.shape[0])
    total = np.linalg.norm(h) ** 2
    if total <= 1e-24:
        return True
    proj = project_norm2(dec.center, h) + sum(project_norm2(b, h) for b in dec.ideals)
    return bool(abs(total - proj) <= tol * total)


def variance_exact(spec: ModelSpec, decomposition: LieDecomposition) -> VarianceReport:
    """Haar-limit variance of ``f`` over the group: sum over simple ideals of ``P(rho) P(M) / dim``."""
    rho = spec.rho0
    rows = tuple(IdealRow(b.dim, project_norm2(b, rho), project_norm2(b, spec.observable)) for b in decomposition.ideals)
    return VarianceReport(
        rows=rows,
        center_dim=decomposition.center.dim,
        rho_in_algebra=_in_algebra(decomposition, rho, traceless=True),
        obs_in_algebra=_in_algebra(decomposition, spec.observable, traceless=False),
    )


def algebra_of(spec: ModelSpec, tol: float = DEFAULT_TOL, max_dim: Optional[int] = None) -> LieBasis:
    return closure(spec.generators(), tol=tol, max_dim=max_dim)


# ---------------------------------------------------------------------------
# sampled variance


@dataclass(frozen=True)
class SampledVariance:
    variance: float
    x: np.ndarray
    T: float
    draws: int


def random_amplitudes(spec: ModelSpec, draws: int, low: float, high: float, seed: int, K: Optional[int] = None) -> np.ndarray:
    """``(draws, C, K)`` amplitude sets: tunable entries uniform on ``[low, high]``, frozen entries kept.

    Each draw has its own stream spawned from ``seed``, so a draw does not depend on
    how many others are generated.
    """
    sched = spec.schedule
    K = sched.K if K is None else K
    frozen_vals = np.repeat(sched.amplitudes[:, :1], K, axis=1) if sched.K else np.zeros((sched.n_channels, K))
    tun = np.repeat(sched.tunable[:, :1], K, axis=1) if sched.K else np.ones((sched.n_channels, K), bool)
    out = np.empty((draws, sched.n_channels, K))
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(draws)):
        r = np.random.default_rng(ss).uniform(low, high, size=(sched.n_channels, K))
        out[i] = np.where(tun, r, frozen_vals)
    return out


def _pick_x(spec: ModelSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5EED])
    return rng.uniform(spec.domain[:, 0], spec.domain[:, 1])


def variance_sampled(
    spec: ModelSpec,
    draws: int,
    low: float = -np.pi,
    high: float = np.pi,
    seed: int = 0,
    x=None,
    chunk: int = 500,
) -> SampledVariance:
    """Unbiased sample variance of ``f(x)`` over random pulse draws at fixed ``x``."""
    if draws < 2:
        raise ValueError("need at least two draws")
    x = _pick_x(spec, seed) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    amps = random_amplitudes(spec, draws, low, high, seed)
    vals = np.concatenate([sim.measure_schedules(spec, x, amps[i : i + chunk]) for i in range(0, draws, chunk)])
    return SampledVariance(float(np.var(vals, ddof=1)), x, spec.schedule.T, draws)


@dataclass(frozen=True)
class StationaryVariance:
    variance: float
    T: float
    stationary: bool
    trace: tuple[tuple[float, float], ...]
    x: np.ndarray


def variance_stationary(
    spec: ModelSpec,
    draws: int = 1000,
    T0: float = 5.0,
    growth: float = 1.5,
    rtol: float = 0.05,
    T_max: float = 80.0,
    low: float = -np.pi,
    high: float = np.pi,
    seed: int = 0,
    x=None,
    statistic=None,
) -> StationaryVariance:
    """Grow ``T`` until the sampled variance at ``T`` and ``growth*T`` agree within ``rtol``.

    Draws at the shorter duration reuse the leading segments of the longer
    draws, so the two estimates share randomness and their difference is not
    dominated by sampling noise. ``statistic(spec, x, amps)`` may replace the
    default per-draw output (e.g. with a loss).
    """
    x = _pick_x(spec, seed) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    stat = statistic or (lambda s, xx, a: sim.measure_schedules(s, xx, a))
    dt = spec.schedule.dt
    trace: list[tuple[float, float]] = []

    def var_at(T_: float, amps: np.ndarray) -> float:
        K = int(round(T_ / dt))
        s = spec.with_duration(K * dt)
        vals = np.concatenate([stat(s, x, amps[i : i + 250, :, :K]) for i in range(0, draws, 250)])
        return float(np.var(vals, ddof=1))

    T = T0
    while True:
        T_long = T * growth
        amps = random_amplitudes(spec, draws, low, high, seed, K=int(round(T_long / dt)))
        v_short = var_at(T, amps)
        v_long = var_at(T_long, amps)
        trace += [(T, v_short), (T_long, v_long)]
        if abs(v_long - v_short) <= rtol * max(abs(v_long), abs(v_short)):
            return StationaryVariance(v_long, T_long, True, tuple(trace), x)
        if T_long * growth > T_max:
            return StationaryVariance(v_long, T_long, False, tuple(trace), x)
        T = T_long
