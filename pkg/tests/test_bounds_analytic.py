import itertools

import numpy as np
import pytest

from conftest import MULTI, POINTS, setup
from qig import bounds_analytic as ba
from qig import fisher, measurement, models, numlin
from qig.errors import InvalidFrameError, InvalidInputError, ResourceLimitError


def dense_cp(rho, L_tilde, p):
    """Second path: build full p-copy operators by explicit Kronecker sums."""
    d = rho.dim
    R = rho.matrix
    for _ in range(p - 1):
        R = np.kron(R, rho.matrix)
    w, V = np.linalg.eigh(R)
    S = V @ np.diag(np.sqrt(np.clip(w, 0, None))) @ V.conj().T

    def lift(op):
        total = 0
        for i in range(p):
            f = [np.eye(d)] * p
            f[i] = op
            term = f[0]
            for g in f[1:]:
                term = np.kron(term, g)
            total = total + term
        return total

    big = [lift(L) for L in L_tilde.ops]
    n = len(big)
    C = np.zeros((n, n))
    for j in range(n):
        for k in range(n):
            M = S @ (big[j] @ big[k] - big[k] @ big[j]) @ S
            s2 = np.linalg.eigvalsh(M.conj().T @ M)
            C[j, k] = 0.5 * np.sum(np.sqrt(np.clip(s2, 0, None)))
    return C


def brute_tp(rho, L_tilde, p):
    """Enumerate all m^p eigenvector strings."""
    lam = rho.eigenvalues[rho.support]
    V = rho.eigenvectors[:, rho.support]
    n = len(L_tilde.ops)
    T = np.zeros((n, n))
    for j, k in itertools.combinations(range(n), 2):
        comm = L_tilde.ops[j] @ L_tilde.ops[k] - L_tilde.ops[k] @ L_tilde.ops[j]
        a = np.array([V[:, i].conj() @ comm @ V[:, i] for i in range(len(lam))])
        total = 0.0
        for string in itertools.product(range(len(lam)), repeat=p):
            total += np.prod(lam[list(string)]) * abs(sum(a[i] for i in string))
        T[j, k] = T[k, j] = 0.5 * total
    return T


class TestFn:
    @pytest.mark.parametrize("n,expected", [(2, 0.25), (3, 0.25), (6, 0.2), (4, 2 / 9)])
    def test_values(self, n, expected):
        assert ba.f_n(n) == pytest.approx(expected)

    def test_n_one(self):
        with pytest.raises(InvalidInputError):
            ba.f_n(1)


class TestPureBound:
    def test_commuting_gives_n(self):
        assert ba.pure_state_gamma_bound(np.eye(3), np.zeros((3, 3)), 3) == 3

    def test_pure_qubit_value(self):
        s = setup("pure_qubit")
        # F_Q^{-1/2} F_Im F_Q^{-1/2} has off-diagonal ±1, so ‖·‖_F² = 2
        assert ba.pure_state_gamma_bound(s.F, fisher.f_im(s.rho, s.L), 2) == pytest.approx(1.5)

    def test_reparametrization_invariance(self):
        s = setup("pure_qubit")
        A = np.array([[1.3, 0.4], [-0.2, 0.7]])
        F_Im = fisher.f_im(s.rho, s.L)
        b1 = ba.pure_state_gamma_bound(s.F, F_Im, 2)
        b2 = ba.pure_state_gamma_bound(A.T @ s.F @ A, A.T @ F_Im @ A, 2)
        assert b2 == pytest.approx(b1, abs=1e-9)


class TestCp:
    def test_classical_zero(self):
        s = setup("classical_2p")
        for p in (1, 2, 3):
            assert np.max(ba.cp_matrix(s.rho, s.L_tilde, p).matrix) < 1e-12

    @pytest.mark.parametrize("name", ["noisy_qubit", "unitary_2p", "bloch_3p", "planar_bloch_2p"])
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_dense_second_path(self, name, p):
        s = setup(name)
        C = ba.cp_matrix(s.rho, s.L_tilde, p).matrix
        np.testing.assert_allclose(C, dense_cp(s.rho, s.L_tilde, p), atol=1e-9)

    def test_shape_invariants(self, multi_model):
        C = ba.cp_matrix(multi_model.rho, multi_model.L_tilde, 2).matrix
        assert np.all(np.diag(C) == 0) and np.all(C >= 0)
        np.testing.assert_array_equal(C, C.T)

    def test_noisy_positive(self):
        s = setup("noisy_qubit")
        assert ba.cp_matrix(s.rho, s.L_tilde, 1).matrix[0, 1] > 0

    def test_gamma_bound(self):
        assert ba.cp_gamma_bound(np.zeros((2, 2)), 3, 2) == 2
        C = np.array([[0, 1.0], [1.0, 0]])
        assert ba.cp_gamma_bound(C, 1, 2) == pytest.approx(2 - 0.25 * 2)

    def test_zero_iff_partial_commutative(self, multi_model):
        rep = fisher.commutator_report(multi_model.rho, multi_model.L)
        C = ba.cp_matrix(multi_model.rho, multi_model.L_tilde, 1)
        bound = ba.cp_gamma_bound(C, 1, multi_model.model.n)
        assert (bound == multi_model.model.n) == (rep.partial_max <= 1e-9)

    def test_tighter_than_fbar_for_pure(self):
        # ‖C_p/p‖_F ≥ ‖F_Q^{-1/2} F̄_Imp F_Q^{-1/2}/p‖_F at the same prefactor
        s = setup("pure_qubit")
        S = fisher.metric_inv_sqrt(s.F)
        for p in (1, 2):
            C = ba.cp_matrix(s.rho, s.L_tilde, p).matrix / p
            for U in (ba.eigen_frame(s.rho, p), np.eye(2 ** p)):
                im = ba._frame_imag_parts(s.rho, s.L, p, U).sum(axis=0)
                assert np.linalg.norm(C) >= np.linalg.norm(S @ im @ S / p) - 1e-12

    def test_resource_limit(self, monkeypatch):
        monkeypatch.setenv("QIG_MAX_DIM", "8")
        s = setup("noisy_qubit")
        with pytest.raises(ResourceLimitError):
            ba.cp_matrix(s.rho, s.L_tilde, 4)


class TestCpLimit:
    def test_classical(self):
        s = setup("classical_2p")
        assert np.max(ba.cp_limit_matrix(s.rho, s.L_tilde)) < 1e-12

    def test_pure_qubit_equals_reparametrized_fim(self):
        s = setup("pure_qubit")
        S = fisher.metric_inv_sqrt(s.F)
        Fim_t = S @ fisher.f_im(s.rho, s.L) @ S
        assert ba.cp_limit_matrix(s.rho, s.L_tilde)[0, 1] == pytest.approx(abs(Fim_t[0, 1]))

    def test_zero_iff_weak(self, multi_model):
        rep = fisher.commutator_report(multi_model.rho, multi_model.L)
        lim = ba.cp_limit_matrix(multi_model.rho, multi_model.L_tilde)
        assert (np.max(lim) <= 1e-12) == (rep.weak_max <= 1e-8)

    def test_noisy_convergence(self):
        s = setup("noisy_qubit")
        lim = ba.cp_limit_matrix(s.rho, s.L_tilde)[0, 1]
        gaps = [abs(ba.cp_matrix(s.rho, s.L_tilde, p).matrix[0, 1] / p - lim) for p in range(1, 6)]
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 0.5 * gaps[0]

    def test_planar_strictly_converges(self):
        # weak-commutative family: C_p/p → 0 strictly
        s = setup("planar_bloch_2p")
        vals = [ba.cp_matrix(s.rho, s.L_tilde, p).matrix[0, 1] / p for p in range(1, 6)]
        assert all(b < a for a, b in zip(vals, vals[1:]))


class TestTp:
    def test_classical_zero(self):
        s = setup("classical_2p")
        assert np.max(ba.tp_matrix(s.rho, s.L_tilde, 3).matrix) == 0

    @pytest.mark.parametrize("name", ["noisy_qubit", "unitary_2p", "bloch_3p", "planar_bloch_2p"])
    @pytest.mark.parametrize("p", [1, 2, 3, 5])
    def test_brute_force_strings(self, name, p):
        s = setup(name)
        np.testing.assert_allclose(ba.tp_matrix(s.rho, s.L_tilde, p).matrix,
                                   brute_tp(s.rho, s.L_tilde, p), atol=1e-12)

    def test_p1_closed_form(self):
        s = setup("noisy_qubit")
        L1, L2 = s.L_tilde.ops
        comm = L1 @ L2 - L2 @ L1
        V, lam = s.rho.eigenvectors, s.rho.eigenvalues
        closed = 0.5 * sum(lam[i] * abs(V[:, i].conj() @ comm @ V[:, i]) for i in range(2))
        assert abs(ba.tp_matrix(s.rho, s.L_tilde, 1).matrix[0, 1] - closed) <= 1e-12

    def test_monte_carlo_consistent(self):
        s = setup("noisy_qubit")
        exact = ba.tp_matrix(s.rho, s.L_tilde, 4).matrix[0, 1]
        mc = ba.tp_matrix(s.rho, s.L_tilde, 4, "monte-carlo", 100_000, seed=1)
        assert abs(mc.matrix[0, 1] - exact) <= 3 * mc.stderr[0, 1]

    def test_exact_enumeration_limit(self, monkeypatch):
        monkeypatch.setattr(ba, "EXACT_TP_LIMIT", 3)
        s = setup("noisy_qubit")
        with pytest.raises(ResourceLimitError, match="monte-carlo"):
            ba.tp_matrix(s.rho, s.L_tilde, 5)

    def test_gamma_bound_zero(self):
        assert ba.tp_gamma_bound(np.zeros((3, 3)), 2, 3) == 3

    def test_gap_to_cp_shrinks(self):
        for name in ("planar_bloch_2p", "bloch_3p"):
            s = setup(name)
            n = s.model.n

            def gap(p):
                return abs(ba.tp_gamma_bound(ba.tp_matrix(s.rho, s.L_tilde, p), p, n)
                           - ba.cp_gamma_bound(ba.cp_matrix(s.rho, s.L_tilde, p), p, n))

            assert gap(4) < gap(1)


class TestFbar:
    def test_classical_gives_n(self):
        s = setup("classical_2p")
        assert ba.fbar_imp_gamma_bound(s.rho, s.L, 1, np.eye(3)) == 2

    def test_pure_eigen_frame(self):
        s = setup("pure_qubit")
        value = ba.fbar_imp_gamma_bound(s.rho, s.L, 1, ba.eigen_frame(s.rho))
        assert 0 <= value <= 2

    def test_transpose_flips_sign(self):
        s = setup("noisy_qubit")
        U = ba.random_frame(2, 3, np.random.default_rng(0))
        all_t = ba.fbar_imp_gamma_bound(s.rho, s.L, 1, U, [True] * 3)
        none_t = ba.fbar_imp_gamma_bound(s.rho, s.L, 1, U, [False] * 3)
        assert all_t == pytest.approx(none_t, abs=1e-12)

    def test_invalid_frame(self):
        s = setup("noisy_qubit")
        with pytest.raises(InvalidFrameError):
            ba.fbar_imp_gamma_bound(s.rho, s.L, 1, 0.9 * np.eye(2))
        with pytest.raises(InvalidFrameError):
            ba.fbar_imp_gamma_bound(s.rho, s.L, 1, np.eye(2), [True])

    def test_random_frame_resolves_identity(self):
        U = ba.random_frame(4, 7, np.random.default_rng(1))
        ba.check_frame(U, 4)

    def test_best_mask_is_no_looser(self):
        s = setup("unitary_2p")
        U = ba.random_frame(2, 4, np.random.default_rng(3))
        best, mask = ba.best_fbar_bound(s.rho, s.L, 1, U)
        assert best <= ba.fbar_imp_gamma_bound(s.rho, s.L, 1, U) + 1e-12
        assert best == pytest.approx(ba.fbar_imp_gamma_bound(s.rho, s.L, 1, U, mask), abs=1e-12)


class TestFixedBounds:
    def test_values(self):
        assert (ba.gill_massar_bound(2), ba.zhu_hayashi_bound(2)) == (1.0, 1.5)
        assert (ba.gill_massar_bound(3), ba.zhu_hayashi_bound(3)) == (2.0, 3.0)


class TestCovConversion:
    def test_identity_cases(self):
        assert ba.weighted_cov_lower_bound(np.eye(3), np.eye(3), 3) == pytest.approx(3)
        F = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert ba.weighted_cov_lower_bound(F, F, 2) == pytest.approx(2)

    def test_n_over_d_recovers_qcrb_for_isotropic_metric(self):
        F = np.diag([2.0, 2.0])
        assert ba.weighted_cov_lower_bound(np.eye(2), F, 2) == pytest.approx(np.trace(np.linalg.inv(F)))

    @pytest.mark.parametrize("D", [0, -1])
    def test_bad_d(self, D):
        with pytest.raises(InvalidInputError):
            ba.weighted_cov_lower_bound(np.eye(2), np.eye(2), D)

    def test_singular_metric(self):
        with pytest.raises(InvalidInputError):
            ba.weighted_cov_lower_bound(np.eye(2), np.diag([1.0, 0.0]), 1)


class TestBestBound:
    def test_single_trivial(self):
        rep = ba.BoundReport("m", [0], 1, 2, 2)
        rep.add("trivial", 2.0)
        assert ba.best_gamma_bound(rep) == ("trivial", 2.0)

    def test_minimum(self):
        rep = ba.BoundReport("m", [0], 1, 2, 2)
        for name, v in (("trivial", 2.0), ("cp", 1.7), ("tp", 1.75)):
            rep.add(name, v)
        assert ba.best_gamma_bound(rep) == ("cp", 1.7)

    def test_tie_precedence(self):
        rep = ba.BoundReport("m", [0], 1, 2, 2)
        for name in ("trivial", "zhu_hayashi", "tp", "fbar", "cp"):
            rep.add(name, 1.5 if name != "trivial" else 2.0)
        assert ba.best_gamma_bound(rep)[0] == "cp"

    def test_skipped_ignored(self):
        rep = ba.BoundReport("m", [0], 1, 2, 2)
        rep.add("trivial", 2.0)
        rep.add("pure", None, "skipped")
        assert ba.best_gamma_bound(rep) == ("trivial", 2.0)


class TestComputeBounds:
    def test_noisy_statuses(self):
        rep = ba.compute_bounds(models.get_model("noisy_qubit"), POINTS["noisy_qubit"], 1)
        status = {e.name: e.status for e in rep.entries}
        assert status["pure"] == "skipped" and status["zhu_hayashi"] == "skipped"
        assert status["gill_massar"] == "ok"
        for e in rep.gamma_entries():
            assert 0 <= e.value <= 2 + 1e-9

    def test_gill_massar_non_binding(self):
        rep = ba.compute_bounds(models.get_model("classical_2p"), [0.2, 0.3], 1)
        assert rep.get("gill_massar").status == "non-binding"

    @pytest.mark.parametrize("name", MULTI)
    def test_reparametrization_invariance(self, name):
        # linear reparametrization x = A y: L_y = Aᵀ L_x, F_y = Aᵀ F_x A
        s = setup(name)
        A = np.eye(s.model.n) + 0.3 * np.triu(np.ones((s.model.n, s.model.n)), 1)
        L_y = fisher.SLDSet(np.einsum("kj,kab->jab", A, s.L.ops), s.rho)
        F_y = fisher.qfim(s.rho, L_y).matrix
        Lt_y = fisher.reparametrized_slds(L_y, F_y)
        n = s.model.n
        for p in (1, 2):
            c_x = ba.cp_gamma_bound(ba.cp_matrix(s.rho, s.L_tilde, p), p, n)
            c_y = ba.cp_gamma_bound(ba.cp_matrix(s.rho, Lt_y, p), p, n)
            assert c_y == pytest.approx(c_x, abs=1e-8)
            t_x = ba.tp_gamma_bound(ba.tp_matrix(s.rho, s.L_tilde, p), p, n)
            t_y = ba.tp_gamma_bound(ba.tp_matrix(s.rho, Lt_y, p), p, n)
            assert t_y == pytest.approx(t_x, abs=1e-8)
            U = ba.eigen_frame(s.rho, p)
            f_x = ba.fbar_imp_gamma_bound(s.rho, s.L, p, U)
            f_y = ba.fbar_imp_gamma_bound(s.rho, L_y, p, U)
            assert f_y == pytest.approx(f_x, abs=1e-8)

    def test_report_json(self):
        rep = ba.compute_bounds(models.get_model("unitary_2p"), POINTS["unitary_2p"], 2)
        out = rep.to_json()
        assert set(out) >= {"model", "x", "p", "bounds", "best"}
        assert out["best"]["value"] <= 2
