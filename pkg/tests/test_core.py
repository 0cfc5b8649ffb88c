import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_ot.core import (
    DimensionMismatch,
    IdealPlan,
    InvalidPattern,
    KernelOverflowError,
    KernelUnderflowError,
    NonfiniteCost,
    NonpositiveIdealEntry,
    NonpositiveMarginal,
    NonpositiveRegularization,
    PatternMismatch,
    ProblemInstance,
    Support,
    TransportPlan,
    UnbalancedInput,
    ZeroColumnInPattern,
    ZeroPattern,
    ZeroRowInPattern,
    build_kernel,
    check_feasibility_exact,
    validate_instance,
)


class TestZeroPattern:
    def test_fully_forbidden_row(self):
        with pytest.raises(ZeroRowInPattern) as exc:
            ZeroPattern(2, 2, [(0, 0), (0, 1)])
        assert exc.value.index == 0

    def test_fully_forbidden_column(self):
        with pytest.raises(ZeroColumnInPattern) as exc:
            ZeroPattern(3, 2, [(0, 1), (1, 1), (2, 1)])
        assert exc.value.index == 1

    def test_coverage_can_be_deferred(self):
        pat = ZeroPattern(2, 2, [(0, 0), (0, 1)], check_coverage=False)
        assert [type(e) for e in pat.coverage_violations()] == [ZeroRowInPattern]

    @pytest.mark.parametrize("pairs", [[(0, 0), (0, 0)], [(2, 0)], [(0, -1)]])
    def test_rejects_bad_pairs(self, pairs):
        with pytest.raises(InvalidPattern):
            ZeroPattern(2, 2, pairs)

    def test_allowed_layout_is_row_major(self):
        pat = ZeroPattern(2, 3, [(0, 1), (1, 0)])
        assert pat.rows.tolist() == [0, 0, 1, 1]
        assert pat.cols.tolist() == [0, 2, 1, 2]
        assert pat.nnz == 4 and len(pat) == 2
        assert (0, 1) in pat and (0, 0) not in pat

    def test_is_immutable(self):
        pat = ZeroPattern(2, 2, [(1, 1)])
        with pytest.raises(ValueError):
            pat.allowed[0, 0] = False

    def test_equality_and_mask_roundtrip(self):
        pat = ZeroPattern(3, 3, [(0, 2), (2, 0)])
        assert ZeroPattern.from_mask(pat.allowed) == pat
        assert hash(ZeroPattern.from_mask(pat.allowed)) == hash(pat)
        assert pat != ZeroPattern(3, 3, [(0, 2)])


class TestMaskedMatrix:
    def test_dense_roundtrip(self):
        pat = ZeroPattern(2, 2, [(1, 1)])
        mat = np.array([[1.0, 2.0], [3.0, 0.0]])
        tp = TransportPlan.from_matrix(mat, pat)
        assert tp.values.tolist() == [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(tp.matrix, mat)
        np.testing.assert_array_equal(tp.row_sums(), [3.0, 3.0])
        np.testing.assert_array_equal(tp.col_sums(), [4.0, 2.0])
        assert list(tp.triples()) == [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]

    def test_nonzero_on_pattern_rejected(self):
        pat = ZeroPattern(2, 2, [(1, 1)])
        with pytest.raises(PatternMismatch):
            TransportPlan.from_matrix(np.ones((2, 2)), pat)

    def test_wrong_length_rejected(self):
        with pytest.raises(DimensionMismatch):
            TransportPlan(ZeroPattern(2, 2, [(1, 1)]), np.ones(4))

    def test_values_are_read_only(self):
        tp = IdealPlan.ones(ZeroPattern(2, 2))
        with pytest.raises(ValueError):
            tp.values[0] = 5.0


class TestValidateInstance:
    def test_two_by_two_example_accepted(self, two_by_two):
        assert validate_instance(two_by_two).ok

    def test_zero_row(self):
        inst = ProblemInstance.create([1, 1], [1, 1], np.zeros((2, 2)), forbidden=[(0, 0), (0, 1)])
        errors = validate_instance(inst).errors
        assert any(isinstance(e, ZeroRowInPattern) and e.index == 0 for e in errors)

    def test_zero_marginal(self):
        inst = ProblemInstance.create([0.0, 1.0], [0.5, 0.5], np.zeros((2, 2)))
        result = validate_instance(inst)
        assert not result
        assert [type(e) for e in result.errors] == [NonpositiveMarginal]
        with pytest.raises(NonpositiveMarginal):
            result.raise_for_errors()

    def test_reports_every_violation(self):
        pat = ZeroPattern(2, 3, [(0, 0), (1, 0)], check_coverage=False)
        ideal = IdealPlan(pat, [1.0, -1.0, 1.0, 1.0])
        cost = np.array([[0.0, np.inf, 0.0], [0.0, 0.0, 0.0]])
        inst = ProblemInstance(np.array([1.0, -1.0]), np.array([1.0, 1.0]), cost, pat, ideal, 0.0, 1.0)
        kinds = {type(e) for e in validate_instance(inst).errors}
        assert kinds == {
            ZeroColumnInPattern, NonpositiveMarginal, NonfiniteCost,
            NonpositiveIdealEntry, NonpositiveRegularization, DimensionMismatch,
        }

    def test_cost_on_pattern_is_ignored(self):
        cost = np.array([[0.0, 0.0], [0.0, np.nan]])
        inst = ProblemInstance.create([1, 2], [2, 1], cost, forbidden=[(1, 1)])
        assert validate_instance(inst).ok
        assert inst.kernel.values.tolist() == [1.0, 1.0, 1.0]

    def test_negative_costs_allowed(self):
        inst = ProblemInstance.create([1, 1], [1, 1], -np.ones((2, 2)))
        assert validate_instance(inst).ok
        assert np.allclose(inst.kernel.values, math.e)

    def test_unbalanced_is_legal(self):
        inst = ProblemInstance.create([1, 1], [5, 1], np.zeros((2, 2)))
        assert validate_instance(inst).ok

    def test_instance_arrays_are_frozen(self, two_by_two):
        with pytest.raises(ValueError):
            two_by_two.u_tilde[0] = 3.0


class TestKernel:
    def test_zero_cost_unit_ideal(self):
        pat = ZeroPattern(2, 2, [(1, 1)])
        k = build_kernel(np.zeros((2, 2)), IdealPlan.ones(pat), 1.0, pat)
        np.testing.assert_array_equal(k.matrix, [[1.0, 1.0], [1.0, 0.0]])

    def test_matches_high_precision_exponential(self):
        pat = ZeroPattern(1, 1)
        k = build_kernel(np.array([[1.99]]), IdealPlan.ones(pat), 1.99, pat)
        assert k.values[0] == pytest.approx(float(mpmath.exp(-1)), rel=1e-15)
        assert k.values[0] == pytest.approx(0.367879, abs=5e-7)

    @settings(max_examples=200, deadline=None)
    @given(
        c=st.floats(-50, 50), t=st.floats(1e-3, 1e3), g0=st.floats(0.1, 100),
    )
    def test_entry_matches_mpmath(self, c, t, g0):
        pat = ZeroPattern(1, 1)
        k = build_kernel(np.array([[c]]), IdealPlan(pat, [t]), g0, pat)
        ref = mpmath.mpf(t) * mpmath.exp(-mpmath.mpf(c) / mpmath.mpf(g0))
        assert k.values[0] == pytest.approx(float(ref), rel=1e-13)

    def test_underflow_is_an_error(self):
        pat = ZeroPattern(1, 2)
        with pytest.raises(KernelUnderflowError):
            build_kernel(np.array([[0.0, 800.0]]), IdealPlan.ones(pat), 1.0, pat)

    def test_overflow_is_an_error(self):
        pat = ZeroPattern(1, 2)
        with pytest.raises(KernelOverflowError):
            build_kernel(np.array([[0.0, -800.0]]), IdealPlan.ones(pat), 1.0, pat)

    def test_rejects_pattern_mismatch(self):
        pat = ZeroPattern(2, 2, [(1, 1)])
        with pytest.raises(PatternMismatch):
            build_kernel(np.zeros((2, 2)), IdealPlan.ones(ZeroPattern(2, 2)), 1.0, pat)

    @settings(max_examples=100, deadline=None)
    @given(data=st.data(), m=st.integers(1, 5), n=st.integers(1, 5))
    def test_positive_off_pattern_zero_on_pattern(self, data, m, n):
        mask = np.array(data.draw(st.lists(st.booleans(), min_size=m * n, max_size=m * n))).reshape(m, n)
        mask[np.arange(m), np.arange(m) % n] = True
        mask[np.arange(n) % m, np.arange(n)] = True
        pat = ZeroPattern.from_mask(mask)
        cost = np.array(data.draw(st.lists(st.floats(-20, 20), min_size=m * n, max_size=m * n))).reshape(m, n)
        k = build_kernel(cost, IdealPlan.ones(pat), data.draw(st.floats(0.5, 10)), pat).matrix
        assert np.all(k[mask] > 0)
        assert np.all(k[~mask] == 0)

    @settings(max_examples=100, deadline=None)
    @given(c=st.floats(-10, 10), dc=st.floats(1e-3, 5), g0=st.floats(0.1, 10))
    def test_monotone_in_cost(self, c, dc, g0):
        pat = ZeroPattern(1, 2)
        k = build_kernel(np.array([[c, c + dc]]), IdealPlan.ones(pat), g0, pat).values
        assert k[1] < k[0]


def _integer_feasible(u, v, allowed):
    """Exhaustive search over integer plans with the given row sums."""
    m, n = allowed.shape
    row_options = []
    for i in range(m):
        cols = np.flatnonzero(allowed[i])
        opts = []
        for combo in itertools.product(range(u[i] + 1), repeat=len(cols)):
            if sum(combo) == u[i]:
                row = np.zeros(n, dtype=int)
                row[cols] = combo
                opts.append(row)
        row_options.append(opts)
    return any(np.array_equal(np.sum(rows, axis=0), v) for rows in itertools.product(*row_options))


class TestFeasibility:
    def test_empty_pattern_is_feasible(self):
        rng = np.random.default_rng(3)
        u = rng.uniform(0.1, 1, 4)
        v = rng.uniform(0.1, 1, 3)
        v *= u.sum() / v.sum()
        assert check_feasibility_exact(ProblemInstance.create(u, v, np.zeros((4, 3))))

    def test_two_by_two_infeasible(self, two_by_two):
        assert not check_feasibility_exact(two_by_two)

    def test_two_by_two_swapped_feasible(self):
        # the only plan is [[1, 1], [1, 0]]
        inst = ProblemInstance.create([2, 1], [2, 1], np.zeros((2, 2)), forbidden=[(1, 1)])
        assert check_feasibility_exact(inst)

    def test_unbalanced_rejected(self):
        inst = ProblemInstance.create([1, 1], [1, 1.5], np.zeros((2, 2)))
        with pytest.raises(UnbalancedInput):
            check_feasibility_exact(inst)

    def test_balance_tolerance_is_relative(self):
        inst = ProblemInstance.create([1e6, 1e6], [1e6, 1e6 * (1 + 1e-12)], np.zeros((2, 2)))
        assert check_feasibility_exact(inst)
        with pytest.raises(UnbalancedInput):
            check_feasibility_exact(inst, rtol=1e-15)

    def test_agrees_with_exhaustive_search(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 150:
            k = int(rng.integers(0, 5))
            cells = rng.choice(9, size=k, replace=False)
            allowed = np.ones((3, 3), dtype=bool)
            allowed.flat[cells] = False
            if not (allowed.any(axis=0).all() and allowed.any(axis=1).all()):
                continue
            u = rng.integers(1, 4, 3)
            v = rng.integers(1, 4, 3)
            if u.sum() != v.sum():
                continue
            pat = ZeroPattern.from_mask(allowed)
            inst = ProblemInstance(u, v, np.zeros((3, 3)), pat, IdealPlan.ones(pat))
            assert check_feasibility_exact(inst) == _integer_feasible(u, v, allowed), (u, v, allowed)
            checked += 1


class TestSupport:
    def test_auto_layout_threshold(self):
        assert Support(ZeroPattern(2, 2, [(1, 1)])).layout == "dense"
        assert Support(ZeroPattern(2, 2, [(0, 1), (1, 0)])).layout == "masked"
        with pytest.raises(ValueError):
            Support(ZeroPattern(2, 2), "csr")

    @pytest.mark.parametrize("layout", ["dense", "masked"])
    def test_operations_agree_with_dense_math(self, layout):
        pat = ZeroPattern(3, 4, [(0, 0), (1, 2), (2, 3)])
        rng = np.random.default_rng(0)
        mat = rng.uniform(0.1, 1, (3, 4)) * pat.allowed
        tp = TransportPlan.from_matrix(mat, pat)
        sup = Support(pat, layout)
        x = sup.pack(tp)
        np.testing.assert_allclose(sup.row_sums(x), mat.sum(axis=1), rtol=1e-15)
        np.testing.assert_allclose(sup.col_sums(x), mat.sum(axis=0), rtol=1e-15)
        r, c = rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 4)
        scaled = sup.to_plan(sup.scale_cols(sup.scale_rows(x, r), c)).matrix
        np.testing.assert_array_equal(scaled, (r[:, None] * mat) * c[None, :])

    def test_pack_rejects_foreign_pattern(self):
        sup = Support(ZeroPattern(2, 2, [(1, 1)]))
        with pytest.raises(PatternMismatch):
            sup.pack(IdealPlan.ones(ZeroPattern(2, 2)))
