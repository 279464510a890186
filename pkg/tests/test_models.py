import numpy as np
import pytest

from conftest import POINTS, REGISTRY
from qig import models
from qig.errors import DomainError, InvalidInputError, ModelNotFoundError


class TestEvaluate:
    def test_pure_qubit_plus_state(self):
        rho = models.evaluate(models.get_model("pure_qubit"), [np.pi / 2, 0.0])
        np.testing.assert_allclose(rho.matrix, 0.5 * np.ones((2, 2)), atol=1e-15)
        assert rho.rank == 1 and rho.is_pure

    def test_classical_diagonal(self):
        rho = models.evaluate(models.get_model("classical_2p"), [0.2, 0.3])
        np.testing.assert_allclose(rho.matrix, np.diag([0.2, 0.3, 0.5]), atol=1e-15)

    def test_bloch_eigenvalues(self):
        rho = models.evaluate(models.get_model("bloch_3p"), [0.3, 0.0, 0.0])
        np.testing.assert_allclose(rho.eigenvalues, [0.35, 0.65], atol=1e-14)

    def test_out_of_domain_names_parameter(self):
        with pytest.raises(DomainError, match="x_2"):
            models.evaluate(models.get_model("classical_2p"), [0.2, 0.995])

    def test_joint_constraint(self):
        with pytest.raises(DomainError):
            models.evaluate(models.get_model("classical_2p"), [0.5, 0.495])
        with pytest.raises(DomainError):
            models.evaluate(models.get_model("bloch_3p"), [0.8, 0.8, 0.0])

    def test_wrong_length(self):
        with pytest.raises(InvalidInputError):
            models.evaluate(models.get_model("pure_qubit"), [0.1])

    @pytest.mark.parametrize("name", REGISTRY)
    def test_random_points_are_states(self, name):
        rng = np.random.default_rng(hash(name) % 2**32)
        model = models.get_model(name)
        for _ in range(10):
            x = models.sample_point(model, rng)
            rho = models.evaluate(model, x)
            assert abs(np.trace(rho.matrix) - 1) < 1e-10
            assert rho.eigenvalues[0] >= -1e-10
            V, w = rho.eigenvectors, rho.eigenvalues
            assert np.linalg.norm(V @ np.diag(w) @ V.conj().T - rho.matrix) < 1e-10
            T = models.tangent(model, x)
            assert T.shape == (model.n, model.d, model.d)
            for D in T:
                assert abs(np.trace(D)) < 1e-8
                assert np.max(np.abs(D - D.conj().T)) < 1e-8


class TestTangent:
    def test_classical_linear(self):
        T = models.tangent(models.get_model("classical_2p"), [0.2, 0.3])
        np.testing.assert_allclose(T[0], np.diag([1, 0, -1]), atol=1e-15)

    @pytest.mark.parametrize("name", [n for n in REGISTRY])
    def test_analytic_matches_finite_difference(self, name):
        model = models.get_model(name)
        x = POINTS[name]
        exact = models.tangent(model, x, mode="analytic")
        fd = models.tangent(model, x, mode="finite-difference")
        assert np.max(np.abs(exact - fd)) <= 1e-8

    def test_richardson_is_more_accurate(self):
        model = models.get_model("unitary_2p")
        x = POINTS["unitary_2p"]
        exact = models.tangent(model, x, mode="analytic")
        plain = models.tangent(model, x, mode="finite-difference", step=1e-2)
        rich = models.tangent(model, x, mode="finite-difference", step=1e-2, richardson=True)
        assert np.max(np.abs(rich - exact)) < 0.05 * np.max(np.abs(plain - exact))

    def test_second_order_convergence(self):
        # halving h cuts the error about fourfold
        model = models.get_model("pure_qubit")
        x = POINTS["pure_qubit"]
        exact = models.tangent(model, x, mode="analytic")
        e1 = np.max(np.abs(models.tangent(model, x, mode="finite-difference", step=2e-2) - exact))
        e2 = np.max(np.abs(models.tangent(model, x, mode="finite-difference", step=1e-2) - exact))
        assert 3.5 < e1 / e2 < 4.5

    def test_step_leaving_domain(self):
        with pytest.raises(DomainError, match="finite-difference"):
            models.tangent(models.get_model("coin"), [0.01 + 1e-9], mode="finite-difference")

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError):
            models.tangent(models.get_model("coin"), [0.3], mode="spline")


class TestRegistry:
    def test_required_models(self):
        names = {m.name for m in models.registry()}
        assert {"pure_qubit", "noisy_qubit", "bloch_3p", "classical_2p", "unitary_2p"} <= names

    @pytest.mark.parametrize("name,n,d", [("pure_qubit", 2, 2), ("bloch_3p", 3, 2),
                                          ("classical_2p", 2, 3), ("unitary_2p", 2, 2)])
    def test_shapes(self, name, n, d):
        m = models.get_model(name)
        assert (m.n, m.d) == (n, d)

    def test_unknown_lists_registry(self):
        with pytest.raises(ModelNotFoundError, match="pure_qubit"):
            models.get_model("nope")

    def test_noisy_default_visibility(self):
        assert models.get_model("noisy_qubit").params["eta"] == 0.8
        rho = models.evaluate(models.get_model("noisy_qubit"), POINTS["noisy_qubit"])
        np.testing.assert_allclose(rho.eigenvalues, [0.1, 0.9], atol=1e-14)

    def test_spec_overrides(self):
        m = models.model_from_spec({"name": "eta5", "kind": "noisy_qubit", "n": 2, "d": 2,
                                    "params": {"eta": 0.5}})
        rho = models.evaluate(m, [0.7, 0.3])
        np.testing.assert_allclose(rho.eigenvalues, [0.25, 0.75], atol=1e-14)

    @pytest.mark.parametrize("spec", [
        {"kind": "noisy_qubit", "colour": 1},
        {"name": "x"},
        {"kind": "noisy_qubit", "n": 3},
        {"kind": "noisy_qubit", "params": {"eta": 1.5}},
    ])
    def test_bad_specs(self, spec):
        with pytest.raises(InvalidInputError):
            models.model_from_spec(spec)

    def test_unknown_kind(self):
        with pytest.raises(ModelNotFoundError):
            models.model_from_spec({"kind": "qutrit_magic"})


class TestDensityMatrix:
    def test_rejects_bad_trace(self):
        with pytest.raises(InvalidInputError):
            models.DensityMatrix.from_matrix(np.eye(2))

    def test_rejects_negative(self):
        with pytest.raises(Exception):
            models.DensityMatrix.from_matrix(np.diag([1.2, -0.2]))

    def test_tensor_power(self):
        rho = models.evaluate(models.get_model("noisy_qubit"), [0.7, 0.3])
        r3 = rho.tensor_power(3)
        expected = np.kron(np.kron(rho.matrix, rho.matrix), rho.matrix)
        np.testing.assert_allclose(r3.matrix, expected, atol=1e-14)
        np.testing.assert_allclose(np.sort(r3.eigenvalues), np.sort(np.linalg.eigvalsh(expected)),
                                   atol=1e-14)
        np.testing.assert_allclose(r3.sqrt @ r3.sqrt, expected, atol=1e-12)
