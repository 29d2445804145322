import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import DEFAULT_T, DELTA_ARGMAX
from radar.network import simulate
from revealed.afriat import (
    AfriatCertificate,
    GridSpec,
    InfeasibleCertificateError,
    PiecewiseLinearUtility,
    UnsupportedDimensionError,
    certificate_violations,
    evaluate,
    evaluate_many,
    export_contour,
    rationalization_check,
    solve_certificate,
    solve_certificates,
    supporting_weights,
    tabulate,
    welfare_optimum,
)
from revealed.coordination import build_problem, decide, garp_oracle
from revealed.dataset import Dataset, PersonalizedAllocation
from revealed.lp import DimensionMismatchError


@pytest.fixture(scope="module")
def reconstructed(coordinated):
    """Witness, certificates and utilities for the seeded three-radar dataset."""
    dataset, truth = coordinated
    verdict = decide(build_problem(dataset))
    certificates = solve_certificates(dataset, verdict.witness)
    utilities = [PiecewiseLinearUtility.from_certificate(dataset, verdict.witness, c) for c in certificates]
    return dataset, truth, verdict.witness, certificates, utilities


def one_piece(u=1.0, lam=1.0, alpha=(1.0, 1.0), anchor=(0.0, 0.0)):
    return PiecewiseLinearUtility(np.array([u]), np.array([lam]), np.array([alpha]), np.array([anchor]))


class TestCertificate:
    def test_exists_for_every_agent(self, reconstructed):
        dataset, _, witness, certificates, _ = reconstructed
        assert [c.agent for c in certificates] == [0, 1, 2]
        for certificate in certificates:
            assert certificate_violations(dataset, witness, certificate) <= 1e-7
            assert np.all(certificate.u >= 1.0 - 1e-9)
            assert np.all(certificate.lam >= 1.0 - 1e-9)

    def test_single_observation(self):
        dataset = Dataset.from_arrays([[1.0, 2.0]], [[0.5, 0.5]], [[[0.5, 0.5]]])
        witness = PersonalizedAllocation(dataset.betas[:, None, :])
        certificate = solve_certificate(dataset, witness, 0)
        np.testing.assert_allclose(certificate.u, [1.0])
        np.testing.assert_allclose(certificate.lam, [1.0])

    def test_garp_cycle_has_no_certificate(self, garp_cycle):
        witness = PersonalizedAllocation(garp_cycle.betas[:, None, :])
        with pytest.raises(InfeasibleCertificateError):
            solve_certificate(garp_cycle, witness, 0)

    def test_json_is_one_based(self):
        certificate = AfriatCertificate(1, np.array([1.0, 2.0]), np.array([1.0, 1.5]))
        assert certificate.to_json() == {"agent": 2, "u": [1.0, 2.0], "lambda": [1.0, 1.5]}

    @pytest.mark.parametrize("seed", range(5))
    def test_utility_maximising_data(self, cobb_douglas_data, seed):
        dataset = cobb_douglas_data(T=8, seed=seed)
        witness = PersonalizedAllocation(dataset.betas[:, None, :])
        certificate = solve_certificate(dataset, witness, 0)
        assert certificate_violations(dataset, witness, certificate) <= 1e-7


class TestEvaluate:
    def test_single_piece(self):
        assert evaluate(one_piece(), [2.0, 3.0]) == pytest.approx(6.0)

    def test_tightness_at_anchors(self, reconstructed):
        _, _, witness, certificates, utilities = reconstructed
        for certificate, utility in zip(certificates, utilities):
            values = evaluate_many(utility, utility.anchors)
            np.testing.assert_allclose(values, certificate.u, atol=1e-7)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            evaluate(one_piece(), [1.0, 2.0, 3.0])

    def test_call_delegates(self):
        utility = one_piece(u=2.0, lam=3.0)
        assert utility([1.0, 0.0]) == evaluate(utility, [1.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2), st.lists(st.floats(0.0, 3.0), min_size=6, max_size=6), st.floats(0.0, 1.0))
    def test_concave(self, reconstructed, agent, coords, weight):
        utility = reconstructed[4][agent]
        a, b = np.array(coords[:2]), np.array(coords[2:4])
        mix = weight * a + (1.0 - weight) * b
        assert evaluate(utility, mix) >= weight * evaluate(utility, a) + (1.0 - weight) * evaluate(utility, b) - 1e-9

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2), st.lists(st.floats(0.0, 3.0), min_size=2, max_size=2),
           st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
    def test_monotone(self, reconstructed, agent, base, step):
        utility = reconstructed[4][agent]
        low = np.array(base)
        assert evaluate(utility, low + np.array(step)) >= evaluate(utility, low) - 1e-9


class TestContour:
    def test_grid_size(self, reconstructed):
        utility = reconstructed[4][0]
        frame = export_contour(utility, GridSpec((0.0, 0.0), (1.0, 1.0), (50, 50)))
        assert len(frame) == 2500
        assert list(frame.columns) == ["beta1", "beta2", "utility"]
        assert np.all(np.isfinite(frame["utility"]))

    def test_row_major_order(self):
        frame = export_contour(one_piece(), GridSpec((0.0, 0.0), (1.0, 2.0), (2, 3)))
        assert frame["beta1"].tolist() == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
        assert frame["beta2"].tolist() == [0.0, 1.0, 2.0, 0.0, 1.0, 2.0]

    def test_tabulate_any_function(self, tri_network):
        frame = tabulate(tri_network.agents[2].utility, GridSpec((0.0, 0.0), (1.0, 2.0), (2, 3)))
        np.testing.assert_allclose(frame["utility"], [0.0, 0.0, 0.0, 0.0, 1.0, 2.0])

    def test_values_match_evaluate(self, reconstructed):
        utility = reconstructed[4][1]
        frame = export_contour(utility)
        assert len(frame) == 100 * 100
        row = frame.iloc[1234]
        assert row["utility"] == pytest.approx(evaluate(utility, [row["beta1"], row["beta2"]]), abs=1e-12)

    def test_default_grid_is_clipped(self, reconstructed):
        frame = export_contour(reconstructed[4][2])
        assert frame["beta1"].min() >= 0.0
        assert frame["beta2"].min() >= 0.0

    def test_needs_two_goods(self):
        utility = PiecewiseLinearUtility(np.ones(1), np.ones(1), np.ones((1, 3)), np.zeros((1, 3)))
        with pytest.raises(UnsupportedDimensionError):
            export_contour(utility)


class TestRationalization:
    def test_no_violations(self, reconstructed):
        dataset, _, witness, certificates, _ = reconstructed
        report = rationalization_check(dataset, witness, certificates)
        assert report.n_violations == 0
        assert report.max_violation <= 1e-7
        assert np.all(np.abs(report.welfare_gap) <= 1e-7)
        assert report.passed

    def test_weights_sum_to_one(self, reconstructed):
        weights = supporting_weights(reconstructed[3])
        np.testing.assert_allclose(weights.sum(axis=1), 1.0)

    def test_truth_attains_reconstructed_optimum(self, reconstructed):
        """The simulator's own choice is among the maximisers of the reconstructed welfare."""
        dataset, truth, _, certificates, utilities = reconstructed
        weights = supporting_weights(certificates)
        for t in range(dataset.T):
            at_truth = sum(weights[t, i] * evaluate(u, truth.q[t, i]) for i, u in enumerate(utilities))
            assert at_truth >= welfare_optimum(dataset, t, utilities, weights[t]) - DELTA_ARGMAX

    def test_corner_bundles(self, reconstructed):
        """All of the budget on one good for one agent never beats the witness."""
        dataset, _, witness, certificates, utilities = reconstructed
        weights = supporting_weights(certificates)
        for t in range(dataset.T):
            alpha, budget = dataset.alphas[t], float(dataset.alphas[t] @ dataset.betas[t])
            chosen = sum(weights[t, i] * evaluate(u, witness.q[t, i]) for i, u in enumerate(utilities))
            for i, utility in enumerate(utilities):
                for k in range(dataset.N):
                    corner = np.zeros(dataset.N)
                    corner[k] = budget / alpha[k]
                    others = sum(weights[t, j] * evaluate(u, np.zeros(dataset.N))
                                 for j, u in enumerate(utilities) if j != i)
                    assert weights[t, i] * evaluate(utility, corner) + others <= chosen + 1e-7

    def test_needs_every_agent(self, reconstructed):
        dataset, _, witness, certificates, _ = reconstructed
        with pytest.raises(ValueError):
            rationalization_check(dataset, witness, certificates[:2])


def assert_reconstruction(dataset, witness, seed: int = 0):
    """Certificate feasibility, tightness at anchors, concavity, monotonicity and rationalization."""
    certificates = solve_certificates(dataset, witness)
    rng = np.random.default_rng(seed)
    for certificate in certificates:
        assert certificate_violations(dataset, witness, certificate) <= 1e-7
        utility = PiecewiseLinearUtility.from_certificate(dataset, witness, certificate)
        np.testing.assert_allclose(evaluate_many(utility, utility.anchors), certificate.u, atol=1e-7)
        scale = max(float(utility.anchors.max()), 1.0)
        a, b = rng.uniform(0.0, 2 * scale, size=(2, 50, dataset.N))
        w = rng.uniform(0.0, 1.0, size=(50, 1))
        ua, ub = evaluate_many(utility, a), evaluate_many(utility, b)
        mixed = evaluate_many(utility, w * a + (1 - w) * b)
        assert np.all(mixed >= w[:, 0] * ua + (1 - w[:, 0]) * ub - 1e-9)
        raised = evaluate_many(utility, a + rng.uniform(0.0, 1.0, size=a.shape))
        assert np.all(raised >= ua - 1e-9)
    assert rationalization_check(dataset, witness, certificates).passed


class TestReproduction:
    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(20))
    def test_simulated_network(self, tri_network, seed):
        dataset, _ = simulate(tri_network, DEFAULT_T, seed)
        verdict = decide(build_problem(dataset))
        assert verdict.coordinating
        assert_reconstruction(dataset, verdict.witness, seed)

    @pytest.mark.parametrize("seed", range(100))
    def test_oracle_instances(self, random_full_observation, seed):
        dataset = random_full_observation(T=2 + seed % 5, seed=seed)
        witness = PersonalizedAllocation(dataset.betas[:, None, :])
        if garp_oracle(dataset):
            assert_reconstruction(dataset, witness, seed)
        else:
            with pytest.raises(InfeasibleCertificateError):
                solve_certificate(dataset, witness, 0)
