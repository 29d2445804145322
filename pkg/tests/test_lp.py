import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revealed.lp import (
    DimensionMismatchError,
    LinearProgram,
    MalformedProgramError,
    NumericFailureError,
    Relation,
    Sense,
    Status,
    solve,
)

INF = float("inf")


def vertex_enumeration_max(c, A, b):
    """Best objective over every basic solution of {A x <= b, x >= 0}."""
    n = A.shape[1]
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = -np.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        sub = G[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, float(c @ x))
    return best


class TestConstruction:
    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            LinearProgram.from_constraints([1.0, 1.0], [([1.0], "<=", 1.0)])

    def test_contradictory_bounds_are_malformed(self):
        with pytest.raises(MalformedProgramError):
            LinearProgram([1.0], np.zeros((0, 1)), (), [], lower=[1.0], upper=[0.0])

    def test_non_finite_coefficients(self):
        with pytest.raises(MalformedProgramError):
            LinearProgram.from_constraints([1.0], [([np.nan], "<=", 1.0)])

    def test_unknown_relation(self):
        with pytest.raises(MalformedProgramError):
            LinearProgram.from_constraints([1.0], [([1.0], "<>", 1.0)])

    def test_instances_are_read_only(self):
        lp = LinearProgram.from_constraints([1.0, 2.0], [([1.0, 1.0], "<=", 1.0)])
        with pytest.raises(ValueError):
            lp.A[0, 0] = 5.0
        assert lp.constraints[0][1] is Relation.LE


class TestSolve:
    def test_symmetric_vertex(self):
        """maximize x1 + x2 subject to x1 + x2 <= 1 reaches 1."""
        lp = LinearProgram.from_constraints([1.0, 1.0], [([1.0, 1.0], "<=", 1.0)], sense=Sense.MAXIMIZE)
        result = solve(lp)
        assert result.status is Status.OPTIMAL
        assert result.objective_value == pytest.approx(1.0, abs=1e-12)
        assert np.all(lp.residuals(result.primal) <= 1e-12)

    def test_contradictory_rows_are_infeasible(self):
        lp = LinearProgram.from_constraints(
            [0.0], [([1.0], ">=", 1.0), ([1.0], "<=", 0.0)], bounds=[(-INF, INF)], sense=Sense.FEASIBILITY
        )
        assert solve(lp).status is Status.INFEASIBLE

    def test_unbounded(self):
        lp = LinearProgram.from_constraints([1.0, 0.0], [([0.0, 1.0], "<=", 1.0)], sense=Sense.MAXIMIZE)
        result = solve(lp)
        assert result.status is Status.UNBOUNDED
        assert result.objective_value == INF

    def test_free_variable_with_equality(self):
        lp = LinearProgram.from_constraints(
            [1.0, 1.0], [([1.0, -1.0], "==", -5.0), ([1.0, 0.0], ">=", -3.0)], bounds=[(-INF, INF), (0.0, INF)]
        )
        result = solve(lp)
        assert result.status is Status.OPTIMAL
        np.testing.assert_allclose(result.primal, [-3.0, 2.0], atol=1e-9)

    def test_upper_bound_only(self):
        lp = LinearProgram.from_constraints([1.0], [], bounds=[(-INF, 2.5)], sense=Sense.MAXIMIZE)
        result = solve(lp)
        assert result.objective_value == pytest.approx(2.5)

    def test_finite_box(self):
        lp = LinearProgram.from_constraints(
            [-1.0, -2.0], [([1.0, 1.0], "<=", 3.0)], bounds=[(1.0, 2.0), (0.5, 1.5)]
        )
        result = solve(lp)
        np.testing.assert_allclose(result.primal, [1.5, 1.5], atol=1e-9)
        assert result.objective_value == pytest.approx(-4.5)

    @pytest.mark.parametrize("bland_after", [0, 1, 50])
    def test_degenerate_cycling_example(self, bland_after):
        """Beale's instance cycles under naive Dantzig pricing; the optimum is -5/4."""
        c = [-0.75, 20.0, -0.5, 6.0]
        rows = [
            ([0.25, -8.0, -1.0, 9.0], "<=", 0.0),
            ([0.5, -12.0, -0.5, 3.0], "<=", 0.0),
            ([0.0, 0.0, 1.0, 0.0], "<=", 1.0),
        ]
        result = solve(LinearProgram.from_constraints(c, rows), bland_after=bland_after)
        assert result.status is Status.OPTIMAL
        assert result.objective_value == pytest.approx(-1.25, abs=1e-9)

    def test_iteration_cap(self):
        lp = LinearProgram.from_constraints([1.0, 1.0], [([1.0, 1.0], "<=", 1.0)], sense=Sense.MAXIMIZE)
        with pytest.raises(NumericFailureError):
            solve(lp, max_iterations=0)

    def test_redundant_equalities(self):
        lp = LinearProgram.from_constraints(
            [1.0, 2.0],
            [([1.0, 1.0], "==", 1.0), ([2.0, 2.0], "==", 2.0)],
        )
        result = solve(lp)
        assert result.status is Status.OPTIMAL
        assert result.objective_value == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_vertex_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.uniform(-0.5, 1.0, size=(8, 5))
        A[0] = 1.0
        b = rng.uniform(0.5, 2.0, size=8)
        c = rng.uniform(-1.0, 1.0, size=5)
        lp = LinearProgram(c, A, (Relation.LE,) * 8, b, sense=Sense.MAXIMIZE)
        result = solve(lp)
        assert result.status is Status.OPTIMAL
        assert result.objective_value == pytest.approx(vertex_enumeration_max(c, A, b), abs=1e-8)

    def test_verbose_logs_tableau(self, caplog):
        lp = LinearProgram.from_constraints([1.0, 1.0], [([1.0, 1.0], "<=", 1.0)], sense=Sense.MAXIMIZE)
        with caplog.at_level("DEBUG", logger="revealed.lp"):
            solve(lp, verbose=True)
        assert any("Pivot" in record.getMessage() for record in caplog.records)


def bounded_primal(seed: int):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-0.5, 1.0, size=(6, 4))
    A[0] = 1.0
    b = rng.uniform(0.5, 2.0, size=6)
    c = rng.uniform(-1.0, 1.0, size=4)
    return A, b, c


class TestDuality:
    """max c'x, Ax <= b, x >= 0 against min b'y, A'y >= c, y >= 0."""

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.floats(0.0, 5.0))
    def test_weak_duality(self, seed, t, delta):
        A, b, c = bounded_primal(seed)
        primal = solve(LinearProgram(c, A, (Relation.LE,) * 6, b, sense=Sense.MAXIMIZE))
        dual = solve(LinearProgram(b, A.T, (Relation.GE,) * 4, c, sense=Sense.MINIMIZE))
        assert primal.status is Status.OPTIMAL and dual.status is Status.OPTIMAL
        # scaled primal points and dual points shifted along the all-ones row stay feasible
        x = t * primal.primal
        y = dual.primal + delta * np.eye(6)[0]
        assert c @ x <= b @ y + 1e-9
        assert primal.objective_value == pytest.approx(dual.objective_value, abs=1e-8)


class TestIdempotence:
    @pytest.mark.parametrize("seed", range(10))
    def test_repeat_solve(self, seed):
        A, b, c = bounded_primal(seed)
        lp = LinearProgram(c, A, (Relation.LE,) * 6, b, sense=Sense.MAXIMIZE)
        first, second = solve(lp), solve(lp)
        np.testing.assert_array_equal(first.primal, second.primal)
        assert first.iterations == second.iterations

    @pytest.mark.parametrize("seed", range(10))
    def test_optimum_as_constraint(self, seed):
        A, b, c = bounded_primal(seed)
        first = solve(LinearProgram(c, A, (Relation.LE,) * 6, b, sense=Sense.MAXIMIZE))
        cut = LinearProgram(c, np.vstack([A, c]), (Relation.LE,) * 6 + (Relation.GE,),
                            np.append(b, first.objective_value - 1e-12), sense=Sense.MAXIMIZE)
        again = solve(cut)
        assert again.status is Status.OPTIMAL
        assert again.objective_value == pytest.approx(first.objective_value, abs=1e-9)


class TestPhaseOne:
    @staticmethod
    def system(seed: int):
        rng = np.random.default_rng(seed)
        A = rng.uniform(-1.0, 1.0, size=(4, 5))
        x0 = rng.uniform(0.0, 1.0, size=5)
        codes = rng.integers(0, 3, size=4)
        relations = tuple((Relation.LE, Relation.EQ, Relation.GE)[k] for k in codes)
        # x0 satisfies every row: slack added under <=, removed under >=
        rhs = A @ x0 + np.array([1.0, 0.0, -1.0])[codes] * rng.uniform(0.0, 0.5, size=4)
        return A, relations, rhs, rng.uniform(-1.0, 1.0, size=5)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_feasible_under_every_sense(self, seed):
        A, relations, rhs, c = self.system(seed)
        for sense in Sense:
            lp = LinearProgram(c, A, relations, rhs, upper=np.full(5, 2.0), sense=sense)
            result = solve(lp)
            assert result.status is Status.OPTIMAL
            assert lp.residuals(result.primal).max() <= 1e-8

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_infeasible_under_every_sense(self, seed):
        A, relations, rhs, c = self.system(seed)
        # x <= 2 componentwise caps the sum at 10
        A = np.vstack([A, np.ones(5)])
        relations = relations + (Relation.GE,)
        rhs = np.append(rhs, 11.0)
        for sense in Sense:
            result = solve(LinearProgram(c, A, relations, rhs, upper=np.full(5, 2.0), sense=sense))
            assert result.status is Status.INFEASIBLE
