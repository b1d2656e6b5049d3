"""Declarative pulse-based model definitions.

A model is a set of Hamiltonian terms, each attached to one pulse channel.
Channels ``0..m-1`` are encoding channels (channel ``k`` multiplies input
``x[k]``), channels ``m..m+p-1`` are control channels. Over segment ``s`` of
the piecewise-constant schedule the Hamiltonian is::

    H = sum_{k<m} x[k] * a[k, s] * H_k + sum_{k>=m} a[k, s] * H_k

All indices are zero-based. Qubit 1 is the leftmost Kronecker factor and
``|0>`` is ``[1, 0]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import linop
from .linop import PAULI


class ModelError(ValueError):
    """Invalid model definition or unsupported builtin request."""


@dataclass(frozen=True)
class PauliString:
    letters: str
    coefficient: float = 1.0

    def __post_init__(self):
        bad = set(self.letters) - set("IXYZ")
        if bad or not self.letters:
            raise ModelError(f"invalid Pauli string {self.letters!r}")
        if not np.isfinite(self.coefficient):
            raise ModelError("Pauli coefficient must be finite")

    @property
    def n(self) -> int:
        return len(self.letters)

    def matrix(self) -> np.ndarray:
        return self.coefficient * linop.kron_all(PAULI[c] for c in self.letters)


def build_pauli(n: int, letters: str) -> np.ndarray:
    """Matrix of a Pauli string such as ``"XZZY"`` on ``n`` qubits."""
    if len(letters) != n:
        raise ModelError(f"Pauli string {letters!r} does not have {n} sites")
    return PauliString(letters.upper()).matrix()


def site_pauli(n: int, site: int, letter: str) -> str:
    """Letters for a single Pauli on ``site`` (0-based) of an ``n``-qubit register."""
    return "I" * site + letter + "I" * (n - site - 1)


def hat_xy(n: int, i: int, j: int) -> str:
    """Jordan-Wigner string ``X_i Z_{i+1} ... Z_{j-1} Y_j`` (0-based sites, i < j)."""
    if not 0 <= i < j < n:
        raise ModelError(f"need 0 <= i < j < n, got i={i}, j={j}, n={n}")
    return "I" * i + "X" + "Z" * (j - i - 1) + "Y" + "I" * (n - j - 1)


@dataclass(frozen=True)
class SpinOperators:
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray

    @property
    def dim(self) -> int:
        return self.jz.shape[0]


def spin_operators(n: int) -> SpinOperators:
    """Spin-(2^n - 1)/2 irrep of su(2) on ``2**n`` levels.

    Basis index ``i`` holds the ``Jz`` eigenvalue ``s = (d-1)/2 - i``, so ``Jz``
    is diagonal and descending.
    """
    if n < 1:
        raise ModelError("spin_operators needs n >= 1")
    d = 2**n
    s = (d - 1) / 2 - np.arange(d)
    jp = np.zeros((d, d), dtype=complex)
    for i in range(1, d):
        # J+ |s> -> |s+1>, and s+1 lives at index i-1
        jp[i - 1, i] = np.sqrt(((d - 1) / 2 - s[i]) * ((d + 1) / 2 + s[i]))
    jm = jp.conj().T
    return SpinOperators(jx=(jp + jm) / 2, jy=(jp - jm) / 2j, jz=np.diag(s).astype(complex))


@dataclass(frozen=True)
class HamiltonianTerm:
    kind: str
    pulse: int
    operator: np.ndarray = field(repr=False)
    input: Optional[int] = None
    paulis: Optional[tuple[PauliString, ...]] = None

    def __post_init__(self):
        if self.kind not in ("encoding", "control"):
            raise ModelError(f"unknown term kind {self.kind!r}")
        if self.kind == "encoding" and self.input is None:
            raise ModelError("encoding terms need an input index")
        if self.kind == "control" and self.input is not None:
            raise ModelError("control terms carry no input index")
        if not linop.is_hermitian(self.operator, tol=1e-12):
            raise ModelError("term operator is not Hermitian")

    @classmethod
    def from_paulis(cls, kind: str, pulse: int, paulis: Sequence[tuple[float, str]], input: Optional[int] = None):
        strings = tuple(PauliString(p.upper(), float(c)) for c, p in paulis)
        op = sum(s.matrix() for s in strings)
        return cls(kind=kind, pulse=pulse, operator=op, input=input, paulis=strings)


@dataclass(frozen=True)
class PulseSchedule:
    """Piecewise-constant amplitudes, shape ``(channels, K)``, segment length ``dt``."""

    dt: float
    amplitudes: np.ndarray
    tunable: np.ndarray
    bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=float, ndmin=2)
        tun = np.array(self.tunable, dtype=bool)
        if tun.shape != amps.shape:
            tun = np.broadcast_to(tun.reshape(-1, 1) if tun.ndim == 1 else tun, amps.shape).copy()
        if not self.dt > 0:
            raise ModelError("segment length dt must be positive")
        if not np.all(np.isfinite(amps)):
            raise ModelError("pulse amplitudes must be finite")
        amps.setflags(write=False)
        tun.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "tunable", tun)
        if self.bounds is not None:
            b = np.array(self.bounds, dtype=float).reshape(amps.shape[0], 2)
            b.setflags(write=False)
            object.__setattr__(self, "bounds", b)

    @classmethod
    def constant(cls, values: Sequence[float], K: int, dt: float, tunable=True) -> "PulseSchedule":
        amps = np.repeat(np.asarray(values, dtype=float).reshape(-1, 1), K, axis=1)
        tun = np.asarray(tunable, dtype=bool)
        if tun.ndim == 1:
            tun = tun.reshape(-1, 1)
        return cls(dt=dt, amplitudes=amps, tunable=np.broadcast_to(tun, amps.shape))

    @property
    def n_channels(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def K(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.K + 1)

    def with_amplitudes(self, amplitudes: np.ndarray) -> "PulseSchedule":
        """Copy with new amplitudes; frozen entries keep their current values."""
        new = np.where(self.tunable, np.asarray(amplitudes, dtype=float), self.amplitudes)
        return replace(self, amplitudes=new)

    def with_tunable(self, tunable) -> "PulseSchedule":
        return replace(self, tunable=np.broadcast_to(tunable, self.amplitudes.shape).copy())

    def resampled(self, K: int, dt: Optional[float] = None) -> "PulseSchedule":
        """Same channels with ``K`` segments; per-channel values taken from segment 0."""
        amps = np.repeat(self.amplitudes[:, :1] if self.K else np.zeros((self.n_channels, 1)), K, axis=1)
        tun = np.repeat(self.tunable[:, :1] if self.K else np.ones((self.n_channels, 1), bool), K, axis=1)
        return replace(self, dt=self.dt if dt is None else dt, amplitudes=amps, tunable=tun)


@dataclass(frozen=True)
class ModelSpec:
    n: int
    m: int
    terms: tuple[HamiltonianTerm, ...]
    initial_state: np.ndarray = field(repr=False)
    observable: np.ndarray = field(repr=False)
    schedule: PulseSchedule = field(repr=False)
    scale: float = 1.0
    domain: Optional[np.ndarray] = None
    name: str = "custom"
    observable_paulis: Optional[tuple[PauliString, ...]] = None

    def __post_init__(self):
        d = 2**self.n
        if self.n < 1 or self.n > linop.MAX_QUBITS:
            raise ModelError(f"qubit count {self.n} outside 1..{linop.MAX_QUBITS}")
        psi = np.asarray(self.initial_state, dtype=complex).ravel()
        if psi.shape != (d,) or abs(np.linalg.norm(psi) - 1) > 1e-12:
            raise ModelError("initial state must be a normalized vector of length 2**n")
        obs = np.asarray(self.observable, dtype=complex)
        if obs.shape != (d, d) or not linop.is_hermitian(obs, 1e-12):
            raise ModelError("observable must be a Hermitian 2**n x 2**n matrix")
        terms = tuple(self.terms)
        for t in terms:
            if t.operator.shape != (d, d):
                raise ModelError("term operator has the wrong dimension")
            if not 0 <= t.pulse < self.schedule.n_channels:
                raise ModelError(f"term pulse index {t.pulse} has no schedule channel")
            if t.kind == "encoding" and not (t.input == t.pulse and t.pulse < self.m):
                raise ModelError("encoding term k must use input k and pulse channel k < m")
            if t.kind == "control" and t.pulse < self.m:
                raise ModelError("control terms must use channels >= m")
        dom = np.tile([-1.0, 1.0], (self.m, 1)) if self.domain is None else np.asarray(self.domain, float).reshape(self.m, 2)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "initial_state", psi)
        object.__setattr__(self, "observable", obs)
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self) -> int:
        return 2**self.n

    @property
    def n_channels(self) -> int:
        return self.schedule.n_channels

    @property
    def p(self) -> int:
        return self.n_channels - self.m

    @property
    def rho0(self) -> np.ndarray:
        return np.outer(self.initial_state, self.initial_state.conj())

    def channel_operators(self) -> np.ndarray:
        """Stack of per-channel Hamiltonians, shape ``(channels, d, d)``."""
        ops = np.zeros((self.n_channels, self.dim, self.dim), dtype=complex)
        for t in self.terms:
            ops[t.pulse] += t.operator
        return ops

    def generators(self) -> list[np.ndarray]:
        """Nonzero channel Hamiltonians, the generators of the dynamical Lie algebra."""
        return [h for h in self.channel_operators() if np.any(h)]

    def channel_weights(self, x) -> np.ndarray:
        """Per-channel input factor: ``x[k]`` for encoding channels, 1 for controls."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.m,):
            raise ModelError(f"input must have {self.m} components, got shape {x.shape}")
        return np.concatenate([x, np.ones(self.p)])

    def hamiltonian_at(self, x, segment: int) -> np.ndarray:
        if not 0 <= segment < self.schedule.K:
            raise IndexError(f"segment {segment} out of range 0..{self.schedule.K - 1}")
        coef = self.channel_weights(x) * self.schedule.amplitudes[:, segment]
        return np.tensordot(coef, self.channel_operators(), axes=1)

    def with_schedule(self, schedule: PulseSchedule) -> "ModelSpec":
        if schedule.n_channels != self.n_channels:
            raise ModelError("schedule channel count does not match the model")
        return replace(self, schedule=schedule)

    def with_scale(self, scale: float) -> "ModelSpec":
        return replace(self, scale=float(scale))

    def with_initial_state(self, psi) -> "ModelSpec":
        return replace(self, initial_state=linop.normalize_state(psi))

    def with_duration(self, T: float, dt: Optional[float] = None) -> "ModelSpec":
        """Resample the schedule to duration ``T`` keeping segment 0's values per channel."""
        dt = self.schedule.dt if dt is None else dt
        K = int(round(T / dt))
        return replace(self, schedule=self.schedule.resampled(K, dt))


# ---------------------------------------------------------------------------
# builtin models


def _ket(bits: str) -> np.ndarray:
    return linop.kron_all(np.array([[1.0], [0.0]]) if b == "0" else np.array([[0.0], [1.0]]) for b in bits).ravel()


def product_state(factors: Sequence[Sequence[complex]]) -> np.ndarray:
    """Normalized tensor product of single-qubit amplitude pairs."""
    return linop.normalize_state(linop.kron_all(np.asarray(f, dtype=complex).reshape(2, 1) for f in factors))


EQ13_STATES = {
    "00": lambda: _ket("00"),
    "paper": lambda: product_state([[2 / np.sqrt(5), 1 / np.sqrt(5)], [1, 0]]),
}


def _schedule_for(m: int, p: int, T: float, dt: float, free_encoding: bool) -> PulseSchedule:
    K = int(round(T / dt))
    amps = np.zeros((m + p, K))
    amps[:m] = 1.0
    tun = np.ones((m + p, K), dtype=bool)
    if not free_encoding:
        tun[:m] = False
    return PulseSchedule(dt=dt, amplitudes=amps, tunable=tun)


def _ctrl(ch: int, paulis) -> HamiltonianTerm:
    return HamiltonianTerm.from_paulis("control", ch, paulis)


def _enc(k: int, paulis) -> HamiltonianTerm:
    return HamiltonianTerm.from_paulis("encoding", k, paulis, input=k)


def paper_model(
    model_id,
    n: Optional[int] = None,
    T: float = 1.0,
    dt: float = 0.1,
    initial: str = "paper",
    free_encoding: Optional[bool] = None,
) -> ModelSpec:
    """Construct one of the builtin models.

    ``model_id`` is ``1``-``4`` for the multi-qubit families, ``"eq13"`` for the
    two-qubit univariate model with ``M = Z Z`` or ``"eq15"`` for the bivariate
    one. Encoding pulses start at 1; they stay frozen unless ``free_encoding``
    (default: frozen everywhere except ``eq15``). Control pulses start at 0.
    """
    key = str(model_id).lower().removeprefix("builtin:")
    if key == "eq13":
        if initial not in EQ13_STATES:
            raise ModelError(f"eq13 initial state must be one of {sorted(EQ13_STATES)}")
        terms = (_enc(0, [(1, "ZZ")]), _ctrl(1, [(1, "XI")]), _ctrl(2, [(1, "IX")]))
        obs = [PauliString("ZZ")]
        psi = EQ13_STATES[initial]()
        return _finish("eq13", 2, 1, terms, psi, obs, T, dt, bool(free_encoding))
    if key == "eq15":
        terms = (_enc(0, [(1, "YY")]), _enc(1, [(1, "ZZ")]), _ctrl(2, [(1, "XI")]), _ctrl(3, [(1, "IX")]))
        obs = [PauliString("ZI"), PauliString("IZ")]
        psi = product_state([[1, 0], [1, 1]])
        return _finish("eq15", 2, 2, terms, psi, obs, T, dt, True if free_encoding is None else free_encoding)
    if key not in ("1", "2", "3", "4"):
        raise ModelError(f"unknown builtin model {model_id!r}")
    if n is None:
        raise ModelError(f"model {key} needs a qubit count")
    lo = {"1": 1, "2": 1, "3": 3, "4": 2}[key]
    if not lo <= n <= linop.MAX_QUBITS:
        raise ModelError(f"model {key} supports {lo} <= n <= {linop.MAX_QUBITS}, got n={n}")
    free = bool(free_encoding)
    zero = _ket("0" * n)
    if key == "1":
        j = spin_operators(n)
        terms = (
            HamiltonianTerm("encoding", 0, j.jz, input=0),
            HamiltonianTerm("control", 1, j.jx),
            HamiltonianTerm("control", 2, j.jy),
        )
        obs = (2 / (2**n - 1)) * j.jz
        return _finish("1", n, 1, terms, zero, obs, T, dt, free)
    if key == "2":
        terms = [_enc(0, [(1, site_pauli(n, k, "Z"))]) for k in range(n)]
        for k in range(n):
            terms.append(_ctrl(1 + 2 * k, [(1, site_pauli(n, k, "X"))]))
            terms.append(_ctrl(2 + 2 * k, [(1, site_pauli(n, k, "Y"))]))
        obs = [PauliString(site_pauli(n, k, "Z"), 1 / n) for k in range(n)]
        return _finish("2", n, 1, tuple(terms), zero, obs, T, dt, free)
    if key == "3":
        terms = [_enc(0, [(1, hat_xy(n, 0, 1))])]
        terms += [_ctrl(1 + k, [(1, hat_xy(n, k, k + 1))]) for k in range(n - 1)]
        obs = [PauliString(hat_xy(n, n - 2, n - 1))]
        psi = product_state([[1, 0]] * (n - 2) + [[1, 1], [1, 1j]])
        return _finish("3", n, 1, tuple(terms), psi, obs, T, dt, free)
    # model 4: ring of ZZ couplings plus local X, Y controls
    terms = [_enc(0, [(1, site_pauli(n, k, "Z"))]) for k in range(n)]
    for k in range(n):
        terms.append(_ctrl(1 + 2 * k, [(1, site_pauli(n, k, "X"))]))
        terms.append(_ctrl(2 + 2 * k, [(1, site_pauli(n, k, "Y"))]))
    for k in range(n):
        a, b = k, (k + 1) % n
        letters = ["I"] * n
        letters[a] = letters[b] = "Z"
        terms.append(_ctrl(1 + 2 * n + k, [(1, "".join(letters))]))
    obs = [PauliString(site_pauli(n, 0, "Z"))]
    return _finish("4", n, 1, tuple(terms), zero, obs, T, dt, free)


def _finish(name, n, m, terms, psi, obs, T, dt, free_encoding) -> ModelSpec:
    p = max(t.pulse for t in terms) + 1 - m
    if isinstance(obs, np.ndarray):
        obs_mat, obs_paulis = obs, None
    else:
        obs_paulis = tuple(obs)
        obs_mat = sum(s.matrix() for s in obs_paulis)
    return ModelSpec(
        n=n,
        m=m,
        terms=tuple(terms),
        initial_state=psi,
        observable=obs_mat,
        schedule=_schedule_for(m, p, T, dt, free_encoding),
        name=name,
        observable_paulis=obs_paulis,
    )


def check_invariants(spec: ModelSpec, tol: float = 1e-12) -> None:
    """Raise ``ModelError`` if any structural invariant of ``spec`` is violated."""
    if not linop.is_hermitian(spec.observable, tol):
        raise ModelError("observable is not Hermitian")
    if abs(np.linalg.norm(spec.initial_state) - 1) > tol:
        raise ModelError("initial state is not normalized")
    for h in spec.channel_operators():
        if not linop.is_hermitian(h, tol):
            raise ModelError("channel Hamiltonian is not Hermitian")
    if spec.schedule.n_channels != spec.m + spec.p:
        raise ModelError("channel count mismatch")
    if not np.all(np.isfinite(spec.schedule.amplitudes)):
        raise ModelError("non-finite amplitudes")


# ---------------------------------------------------------------------------
# model files

SCHEMA = json.loads(resources.files("pulseqml").joinpath("model_schema.json").read_text())


def _cpair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _dense_to_json(a: np.ndarray) -> list:
    return [[_cpair(z) for z in row] for row in a]


def _dense_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def _op_to_json(op: np.ndarray, paulis: Optional[tuple[PauliString, ...]]) -> dict:
    if paulis is not None:
        return {"pauli": [[s.coefficient, s.letters] for s in paulis]}
    return {"dense": _dense_to_json(op)}


def _op_from_json(obj: dict, n: int) -> tuple[np.ndarray, Optional[tuple[PauliString, ...]]]:
    if "pauli" in obj:
        strings = tuple(PauliString(letters.upper(), float(c)) for c, letters in obj["pauli"])
        for s in strings:
            if s.n != n:
                raise ModelError(f"Pauli string {s.letters!r} is not on {n} qubits")
        return sum(s.matrix() for s in strings), strings
    return _dense_from_json(obj["dense"]), None


def to_dict(spec: ModelSpec) -> dict:
    terms = []
    for t in spec.terms:
        entry = {"kind": t.kind, "pulse": t.pulse}
        if t.input is not None:
            entry["input"] = t.input
        entry.update(_op_to_json(t.operator, t.paulis))
        terms.append(entry)
    sched = spec.schedule
    out = {
        "name": spec.name,
        "n": spec.n,
        "m": spec.m,
        "terms": terms,
        "initial_state": [_cpair(z) for z in spec.initial_state],
        "observable": _op_to_json(spec.observable, spec.observable_paulis),
        "schedule": {
            "T": sched.T,
            "K": sched.K,
            "dt": sched.dt,
            "amplitudes": sched.amplitudes.tolist(),
            "tunable": sched.tunable.tolist(),
        },
        "scale": spec.scale,
        "domain": spec.domain.tolist(),
    }
    if sched.bounds is not None:
        out["schedule"]["bounds"] = sched.bounds.tolist()
    return out


def from_dict(obj: dict) -> ModelSpec:
    jsonschema.validate(obj, SCHEMA)
    n, m = obj["n"], obj["m"]
    terms = []
    for t in obj["terms"]:
        op, paulis = _op_from_json(t, n)
        terms.append(HamiltonianTerm(kind=t["kind"], pulse=t["pulse"], operator=op, input=t.get("input"), paulis=paulis))
    s = obj["schedule"]
    K = s["K"]
    dt = s.get("dt", s["T"] / K if K else 0.1)
    amps = np.array(s["amplitudes"], dtype=float).reshape(-1, K)
    schedule = PulseSchedule(dt=dt, amplitudes=amps, tunable=np.array(s["tunable"], dtype=bool).reshape(amps.shape), bounds=s.get("bounds"))
    if K and abs(schedule.T - s["T"]) > 1e-9 * max(1.0, s["T"]):
        raise ModelError("schedule T does not equal K * dt")
    obs, obs_paulis = _op_from_json(obj["observable"], n)
    return ModelSpec(
        n=n,
        m=m,
        terms=tuple(terms),
        initial_state=np.array([complex(re, im) for re, im in obj["initial_state"]]),
        observable=obs,
        schedule=schedule,
        scale=obj.get("scale", 1.0),
        domain=obj.get("domain"),
        name=obj.get("name", "custom"),
        observable_paulis=obs_paulis,
    )


def dumps(spec: ModelSpec) -> str:
    # repr-based float output round-trips every double exactly
    return json.dumps(to_dict(spec), indent=1)


def loads(text: str) -> ModelSpec:
    return from_dict(json.loads(text))


def save(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(spec))


def load(path) -> ModelSpec:
    with open(path) as fh:
        return loads(fh.read())
