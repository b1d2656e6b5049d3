import numpy as np
import pytest

from pulseqml import express, linop, model

from oracles import pauli


def _rand_herm(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


class TestMultiIndices:
    def test_counts(self):
        ks = list(express.multi_indices(2, 3))
        assert len(ks) == 10
        assert ks[0] == (0, 0)
        assert [sum(k) for k in ks] == sorted(sum(k) for k in ks)

    def test_univariate(self):
        assert list(express.multi_indices(1, 3)) == [(0,), (1,), (2,), (3,)]


class TestSubmodule:
    def test_closed_under_controls(self):
        rng = np.random.default_rng(0)
        ctrl = [pauli("XI"), pauli("IX")]
        span = express.submodule([pauli("ZZ")], ctrl)
        for b in span.basis:
            for h in ctrl:
                assert span.contains(-1j * (h @ b - b @ h))
        # a random Hermitian generally is not inside
        assert not span.contains(_rand_herm(rng, 4))

    def test_zz_orbit_under_local_x(self):
        # ZZ, YZ, ZY, YY
        span = express.submodule([pauli("ZZ")], [pauli("XI"), pauli("IX")])
        assert span.dim == 4
        for s in ("ZZ", "YZ", "ZY", "YY"):
            assert span.contains(pauli(s))

    def test_basis_orthonormal_and_hermitian(self):
        span = express.submodule([pauli("ZZ")], [pauli("XI"), pauli("IX")])
        v = span._vecs()
        np.testing.assert_allclose(v @ v.T, np.eye(span.dim), atol=1e-12)
        for b in span.basis:
            assert linop.is_hermitian(b, 1e-12)

    def test_zero_seed(self):
        span = express.submodule([np.zeros((2, 2))], [linop.SX])
        assert span.dim == 0


class TestSSets:
    def test_eq13_ground_state_parity(self):
        table = express.SSets(model.paper_model("eq13", initial="00"))
        rho = model.paper_model("eq13", initial="00").rho0
        assert express.witness(table[(0,)], rho) == pytest.approx(0.5)
        assert express.witness(table[(1,)], rho) < 1e-12
        assert express.witness(table[(2,)], rho) > 0.1

    def test_eq13_dims(self):
        table = express.SSets(model.paper_model("eq13"))
        assert table[(0,)].dim == 4
        assert table[(1,)].dim == 2
        assert table[(2,)].dim == 4

    def test_path_independence(self):
        spec = model.paper_model("eq15")
        for k in [(1, 1), (2, 1), (1, 2), (2, 2)]:
            assert express.path_independent(spec, k)

    def test_bad_index(self):
        table = express.SSets(model.paper_model("eq15"))
        with pytest.raises(ValueError):
            table[(1,)]
        with pytest.raises(ValueError):
            table[(-1, 0)]

    def test_s_sets_cutoff(self):
        sets = express.s_sets(model.paper_model("eq13"), 3)
        assert sorted(sets) == [(0,), (1,), (2,), (3,)]
        with pytest.raises(ValueError):
            express.s_sets(model.paper_model("eq13"), -1)


class TestCheck:
    def test_ground_state_fails_odd(self):
        rep = express.check(model.paper_model("eq13", initial="00"), cutoff=6)
        assert not rep.passed
        assert rep.failures() == [(1,), (3,), (5,)]

    def test_paper_state_passes(self):
        assert express.check(model.paper_model("eq13"), cutoff=6).passed

    def test_cutoff_zero(self):
        rep = express.check(model.paper_model("eq13"), cutoff=0)
        assert len(rep.rows) == 1 and rep.rows[0].degrees == (0,)
        assert rep.passed

    def test_dyson_column_agrees_with_verdict(self):
        rep = express.check(model.paper_model("eq13", initial="00"), cutoff=3, dyson_crosscheck=True, seed=2)
        for r in rep.rows:
            assert r.dyson is not None
            if not r.passed:
                assert r.dyson < 1e-10

    def test_dyson_auto(self):
        rep = express.check(model.paper_model("eq13"), cutoff=1, dyson_crosscheck=None)
        assert all(r.dyson is not None for r in rep.rows)

    def test_literal_is_stricter(self):
        spec = model.paper_model("eq13")
        rep = express.check(spec, cutoff=2, literal=True)
        # some single words give zero even though the span witness is nonzero
        assert all(r.passed for r in rep.rows)
        assert rep.literal
        assert any(r.literal_passed is False for r in rep.rows)

    def test_report_serialisation(self):
        rep = express.check(model.paper_model("eq13", initial="00"), cutoff=2)
        d = rep.to_dict()
        assert d["passed"] is False and len(d["rows"]) == 3
        table = rep.to_table()
        assert "FAIL" in table and table.splitlines()[-1] == "overall: FAIL"
