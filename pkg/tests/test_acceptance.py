"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (printed in the session summary)
before asserting, so a red criterion still reports what was measured.
Criteria 6 and 7 train full-size models and take tens of minutes.
"""

import time

import numpy as np
import pytest

from pulseqml import express, lie, model, sim, train
from pulseqml.model import PulseSchedule

from oracles import eq14_even_reference, table1_dimension, table1_variance

# direct evaluation of mean((2x + x^3 + 8x^7 - 3x^9)^2) on linspace(-1, 1, 200)
ODD_FLOOR_200 = 7.936967784491284

SAMPLED_CASES = [(1, 3), (2, 3), (3, 4), (4, 2)]
N_RANGES = {1: range(2, 7), 2: range(2, 7), 3: range(3, 7), 4: range(2, 4)}


def test_criterion_1_lie_dimensions(report):
    rows, ok, slowest = [], True, 0.0
    cases = [("eq13", None, 6)] + [(k, n, table1_dimension(k, n)) for k, ns in N_RANGES.items() for n in ns]
    for mid, n, want in cases:
        spec = model.paper_model(mid, n=n)
        t0 = time.perf_counter()
        dim = lie.algebra_of(spec).dim
        dt = time.perf_counter() - t0
        slowest = max(slowest, dt)
        good = dim == want and dt < 1.0
        ok &= good
        if not good:
            rows.append(f"{mid}/n={n}: got {dim} want {want} in {dt:.2f}s")
    report(1, ok, f"{len(cases)} closures, slowest {slowest:.2f}s" + ("; " + "; ".join(rows) if rows else ""))
    assert ok, rows


def test_criterion_2_exact_variance(report):
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    for k, ns in N_RANGES.items():
        for n in ns:
            spec = model.paper_model(k, n=n)
            rep = lie.variance_exact(spec, lie.decompose(lie.algebra_of(spec)))
            err = abs(rep.total - table1_variance(k, n))
            worst = max(worst, err)
            if err > 1e-10:
                bad.append(f"model {k} n={n}: {rep.total!r}")
            if k == 3:
                # so(4) splits into two su(2) ideals, so compare projections summed over ideals
                p_obs = sum(r.p_obs for r in rep.rows)
                p_rho = sum(r.p_rho for r in rep.rows)
                for got, want, label in ((p_obs, 2.0**n, "P(M)"), (p_rho, 2.0**-n, "P(rho)")):
                    err = abs(got - want)
                    worst = max(worst, err / want)
                    if err > 1e-10 * max(1.0, want):
                        bad.append(f"model 3 n={n} {label}: {got!r} want {want!r}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 10
    report(2, ok, f"max deviation {worst:.1e}, {elapsed:.1f}s" + ("; " + "; ".join(bad) if bad else ""))
    assert ok, bad


def test_criterion_3_sampled_variance(report):
    parts, ok = [], True
    for k, n in SAMPLED_CASES:
        spec = model.paper_model(k, n=n)
        res = lie.variance_stationary(spec, draws=1000, seed=1)
        want = table1_variance(k, n)
        rel = abs(res.variance - want) / want
        good = res.stationary and rel <= 0.15
        ok &= good
        parts.append(f"M{k}(n={n}) {res.variance:.4f} vs {want:.4f} ({rel:.1%}, T={res.T:g})")
    report(3, ok, "; ".join(parts))
    assert ok, parts


def test_criterion_4_expressivity(report):
    t0 = time.perf_counter()
    problems = []
    ground = express.check(model.paper_model("eq13", initial="00"), cutoff=8)
    for r in ground.rows:
        odd = r.degrees[0] % 2 == 1
        if r.passed == odd:
            problems.append(f"eq13/00 degree {r.degrees[0]} {'passed' if r.passed else 'failed'}")
    if not express.check(model.paper_model("eq13"), cutoff=12).passed:
        problems.append("eq13/paper state failed")
    if not express.check(model.paper_model("eq15"), cutoff=6).passed:
        problems.append("eq15 failed")
    for k, n in [(1, 3), (2, 3), (3, 4)]:
        if not express.check(model.paper_model(k, n=n), cutoff=6).passed:
            problems.append(f"model {k} failed")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 300
    report(4, ok, f"odd-only failures for |00>, all others pass, {elapsed:.1f}s" if ok else "; ".join(problems))
    assert ok, problems


def test_criterion_5_parity(report):
    rng = np.random.default_rng(2024)
    spec = model.paper_model("eq13", T=2.0, initial="00")
    K = spec.schedule.K
    sets = np.empty((100, 3, K))
    sets[:, 0] = 1.0
    sets[:, 1:] = rng.uniform(-np.pi, np.pi, (100, 2, K))
    worst = 0.0
    for x in rng.uniform(-1, 1, 20):
        diff = sim.measure_schedules(spec, [x], sets) - sim.measure_schedules(spec, [-x], sets)
        worst = max(worst, float(np.max(np.abs(diff))))
    ok = worst <= 1e-10
    report(5, ok, f"max |f(x) - f(-x)| = {worst:.1e} over 100 schedules x 20 inputs")
    assert ok


def _fit_first_seed(spec, data, cfg_kwargs, accept, seeds=(0, 1, 2)):
    last = None
    for seed in seeds:
        rec = train.fit(spec, data, train.TrainConfig(seed=seed, **cfg_kwargs))
        last = (seed, rec)
        if accept(rec):
            return seed, rec, True
    return last[0], last[1], False


def test_criterion_6_univariate_fit(report):
    data = train.make_dataset("eq14", 200)
    x = data.inputs[:, 0]
    floor = train.odd_part_floor(data)
    assert floor == pytest.approx(ODD_FLOOR_200, rel=1e-12)

    paper = model.paper_model("eq13", T=20.0, initial="paper")
    assert paper.schedule.K == 200
    seed_p, rec_p, ok_p = _fit_first_seed(
        paper, data, dict(max_iters=5000, target_loss=1e-2), lambda r: r.final_loss <= 1e-2
    )

    # f is even for this state, so on the symmetric grid loss = floor + mean((f - even)^2)
    ground = model.paper_model("eq13", T=20.0, initial="00")
    even = eq14_even_reference(x)

    def ground_ok(rec):
        dev = np.max(np.abs(train.fitted_curve(rec.spec, data.inputs) - even))
        return rec.final_loss <= 1.2 * floor and dev <= 0.1

    seed_g, rec_g, ok_g = _fit_first_seed(ground, data, dict(max_iters=5000, target_loss=floor + 1e-3), ground_ok)
    dev = np.max(np.abs(train.fitted_curve(rec_g.spec, data.inputs) - even))
    ok = ok_p and ok_g
    report(
        6,
        ok,
        f"paper state loss {rec_p.final_loss:.2e} (seed {seed_p}, {rec_p.iterations} it); "
        f"|00> loss {rec_g.final_loss:.4f} vs floor {floor:.4f} (ratio {rec_g.final_loss / floor:.4f}), "
        f"max |f - even| {dev:.3f} (seed {seed_g}, {rec_g.iterations} it)",
    )
    assert ok


# Adam budgets: the free T = 4 fit stops as soon as it reaches 1e-2; every
# other fit gets a fixed budget at least as long as that run typically needs
FIG3_ITERS = 800
FIG3_ITERS_T4_FREE = 1500


def test_criterion_7_bivariate_fit(report):
    data = train.make_dataset("eq17", 50)
    assert data.N == 2500
    free, fixed = {}, {}
    for T in (1.0, 2.0, 4.0):
        spec = model.paper_model("eq15", T=T)
        if T == 4.0:
            cfg = train.TrainConfig(max_iters=FIG3_ITERS_T4_FREE, target_loss=1e-2, seed=0)
        else:
            cfg = train.TrainConfig(max_iters=FIG3_ITERS, seed=0)
        free[T] = train.fit(spec, data, cfg).final_loss
        s = spec.schedule
        amps = s.amplitudes.copy()
        amps[:2] = 1.0
        tun = s.tunable.copy()
        tun[:2] = False
        frozen = spec.with_schedule(PulseSchedule(s.dt, amps, tun))
        fixed[T] = train.fit(frozen, data, train.TrainConfig(max_iters=FIG3_ITERS, seed=0)).final_loss
    ok_fit = free[4.0] <= 1e-2
    ok_order = all(fixed[T] > free[T] for T in free)
    ok = ok_fit and ok_order
    report(
        7,
        ok,
        "free " + ", ".join(f"T={T:g}: {v:.2e}" for T, v in free.items())
        + "; encoding fixed at 1 " + ", ".join(f"T={T:g}: {v:.2e}" for T, v in fixed.items()),
    )
    assert ok


def test_criterion_8_dyson_properties(report):
    rng = np.random.default_rng(8)
    worst_shuffle = 0.0
    for _ in range(100):
        K = int(rng.integers(1, 12))
        s = PulseSchedule(rng.uniform(0.01, 0.3), rng.uniform(-3, 3, (2, K)), True)
        lhs = sim.iterated_integral(s, (0, 1)) + sim.iterated_integral(s, (1, 0))
        rhs = sim.iterated_integral(s, (0,)) * sim.iterated_integral(s, (1,))
        worst_shuffle = max(worst_shuffle, abs(lhs - rhs))

    amps = np.vstack([np.ones(4), rng.uniform(-1, 1, (2, 4))])
    base = model.paper_model("eq13", T=0.1)
    ratios = {}
    for order in (2, 3, 4):
        errs = []
        for T in (0.1, 0.05):
            spec = base.with_schedule(PulseSchedule(T / 4, amps, True))
            psi = sim.evolve(spec, [0.3]).final
            errs.append(np.linalg.norm(np.outer(psi, psi.conj()) - sim.dyson_truncated(spec, [0.3], order)))
        ratios[order] = errs[0] / errs[1]
    ratio_ok = all(2 ** (o + 0.5) <= r <= 2 ** (o + 1.5) for o, r in ratios.items())

    ground = model.paper_model("eq13", T=0.4, initial="00")
    worst_c1 = 0.0
    for _ in range(20):
        a = np.vstack([np.ones(4), rng.uniform(-1, 1, (2, 4))])
        spec = ground.with_schedule(PulseSchedule(0.1, a, ground.schedule.tunable))
        worst_c1 = max(worst_c1, abs(sim.monomial_coefficient(spec, (1,), 5)))

    ok = worst_shuffle <= 1e-10 and ratio_ok and worst_c1 <= 1e-8
    ratio_txt = ", ".join(f"N={o}: 2^{np.log2(r):.2f}" for o, r in ratios.items())
    report(8, ok, f"shuffle {worst_shuffle:.1e}; halving ratios {ratio_txt}; max |C_1| {worst_c1:.1e}")
    assert ok


def test_criterion_9_gradient(report):
    rng = np.random.default_rng(9)
    worst = {}
    for mid, n in (("eq13", None), (2, 2)):
        base = model.paper_model(mid, n=n, T=1.0)
        data = train.make_dataset("eq14", 10)
        w = 0.0
        for _ in range(20):
            amps = base.schedule.with_amplitudes(rng.uniform(-2, 2, base.schedule.amplitudes.shape))
            spec = base.with_schedule(amps).with_scale(rng.uniform(0.5, 5))
            ga, gs = train.gradient(spec, data, "exact")
            fa, fs = train.gradient(spec, data, "fd")
            g = np.append(ga.ravel(), gs)
            f = np.append(fa.ravel(), fs)
            w = max(w, float(np.linalg.norm(g - f) / np.linalg.norm(f)))
        worst[spec.name] = w
    ok = all(v <= 1e-5 for v in worst.values())
    report(9, ok, "max relative deviation " + ", ".join(f"{k}: {v:.1e}" for k, v in worst.items()))
    assert ok
