import types

import numpy as np
import pytest

from phantomnet.mislead import (
    AdversaryModel,
    DegenerateLaw,
    TooLarge,
    brute_force_plan,
    decide,
    plan_phantom,
)
from phantomnet.process import Bounds, ProcessLaw

ADV = AdversaryModel()


def random_instance(rng, coupled=None):
    """Small instance: 1-3 real variables, 1-2 phantoms, at most 4 in total."""
    n_real = int(rng.integers(1, 4))
    n_phantom = int(rng.integers(1, 5 - n_real)) if n_real < 4 else 0
    n_phantom = max(1, min(n_phantom, 4 - n_real))
    n = n_real + n_phantom
    lo = rng.uniform(-5, 5, n)
    hi = lo + rng.uniform(1, 10, n)
    s = hi + rng.uniform(0, 5, n)
    bounds = Bounds(lo, hi, s)
    x = rng.uniform(lo, hi)
    coupled = rng.random() < 0.3 if coupled is None else coupled
    if rng.random() < 0.6:
        C = np.zeros((1, n))
        C[0, :n_real] = rng.choice([-1.0, 1.0, 2.0], n_real)
        if coupled:
            C[0, n_real:] = rng.choice([-1.0, 1.0], n_phantom)
        law = ProcessLaw(n_real, n_phantom, C, C @ x)
    else:
        law = ProcessLaw(n_real, n_phantom)
    return x[:n_real] if not coupled else x, law, bounds, list(range(n_real, n))


def lipschitz(bounds):
    return 2.0 / float(np.min(bounds.safety_limit - bounds.lower))


def test_decide_tie_break_and_limit():
    b = Bounds(np.zeros(3), np.ones(3), np.array([2.0, 2.0, 1.0]))
    cmd = decide(ADV, b.lower, b)
    assert cmd.target_index == 0 and cmd.setpoint == 2.0
    cmd = decide(ADV, np.array([0.9, 0.9, 1.0]), b)
    assert cmd.target_index == 2


def test_decide_matches_exhaustive_argmax():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 8))
        lo = rng.uniform(-3, 3, n)
        hi = lo + rng.uniform(0.5, 4, n)
        b = Bounds(lo, hi, hi + rng.uniform(0, 2, n))
        v = rng.uniform(lo, hi)
        scores = [(v[i] - lo[i]) / (b.safety_limit[i] - lo[i]) for i in range(n)]
        best = max(range(n), key=lambda i: (scores[i], -i))
        assert decide(ADV, v, b).target_index == best


def test_attractiveness_is_affine_and_normalized():
    b = Bounds([1.0, -2.0], [3.0, 0.0], [4.0, 5.0])
    assert np.allclose(ADV.attractiveness(b.lower, b), 0.0)
    assert np.allclose(ADV.attractiveness(b.safety_limit, b), 1.0)


def test_two_variable_hand_solution():
    law = ProcessLaw(1, 1)
    b = Bounds([0.0, 0.0], [10.0, 10.0], [12.0, 12.0])
    plan = plan_phantom([5.0], law, b, [1])
    assert plan.feasible and plan.target == 1
    assert plan.y == pytest.approx([0.0, 10.0])
    assert plan.margin == pytest.approx(10 / 12)
    grid = brute_force_plan([5.0], law, b, [1], grid_n=101)
    assert grid.feasible and grid.target == 1
    assert abs(grid.margin - 10 / 12) <= 0.1 / 12 + 1e-12


def test_no_real_variables():
    law = ProcessLaw(0, 2)
    b = Bounds([0.0, 0.0], [1.0, 1.0], [2.0, 2.0])
    plan = plan_phantom([], law, b, [0, 1])
    assert plan.feasible and plan.margin == float("inf") and plan.target == 0
    assert b.contains(plan.y)


def test_infeasible_law_falls_back():
    # x0 + x1 = 30 cannot hold inside [0, 10]^2
    law = ProcessLaw(2, 0, [[1.0, 1.0]], [30.0])
    b = Bounds([0.0, 0.0], [10.0, 10.0], [12.0, 12.0])
    x = np.array([15.0, 15.0])
    plan = plan_phantom(x, law, b, [1])
    assert not plan.feasible and np.array_equal(plan.y, x)
    assert not brute_force_plan(x, law, b, [1], grid_n=11).feasible


def test_unwinnable_margin_is_infeasible():
    # the real variable is pinned to its safety limit by the law, the phantom cannot beat it
    law = ProcessLaw(2, 1, [[1.0, 1.0, 0.0]], [20.0])
    b = Bounds([0.0, 0.0, 0.0], [10.0, 10.0, 5.0], [10.0, 10.0, 50.0])
    plan = plan_phantom([10.0, 10.0], law, b, [2])
    assert not plan.feasible
    assert np.array_equal(plan.y, [10.0, 10.0, 2.5])


def test_phantom_midpoint_padding():
    law = ProcessLaw(1, 1)
    b = Bounds([0.0, 0.0], [10.0, 4.0], [12.0, 12.0])
    plan = plan_phantom([3.0], law, b, [1])
    assert plan.d_hat.size == 0


def test_degenerate_law():
    b = Bounds(np.zeros(3), np.ones(3), np.full(3, 2.0))
    law = types.SimpleNamespace(n=3, n_real=2, k=2, C=np.array([[1.0, 1, 0], [2.0, 2, 0]]), d=np.zeros(2))
    with pytest.raises(DegenerateLaw):
        plan_phantom([0.5, 0.5], law, b, [2])


def test_brute_force_limits():
    law = ProcessLaw(4, 1)
    b = Bounds(np.zeros(5), np.ones(5), np.full(5, 2.0))
    with pytest.raises(TooLarge):
        brute_force_plan(np.zeros(4), law, b, [4])
    with pytest.raises(TooLarge):
        brute_force_plan(np.zeros(1), ProcessLaw(1, 1), Bounds([0, 0], [1, 1]), [1], grid_n=102)


def test_three_variable_law_against_fine_grid():
    rng = np.random.default_rng(3)
    for _ in range(5):
        law = ProcessLaw(2, 1, [[1.0, 1.0, 1.0]], [0.0])
        lo = rng.uniform(0, 2, 3)
        hi = lo + rng.uniform(2, 6, 3)
        b = Bounds(lo, hi, hi + rng.uniform(0.5, 3, 3))
        x = rng.uniform(lo, hi)
        law = ProcessLaw(2, 1, [[1.0, 1.0, 1.0]], [x.sum()])
        lp = plan_phantom(x, law, b, [2])
        grid = brute_force_plan(x, law, b, [2], grid_n=51)
        h = float(np.max((hi - lo) / 50))
        tol = 2 * h * lipschitz(b)
        if lp.feasible or grid.feasible:
            assert abs(lp.margin - grid.margin) <= tol
        assert lp.margin >= grid.margin - tol


def test_plan_invariants_random():
    rng = np.random.default_rng(17)
    feasible = 0
    for _ in range(200):
        x, law, b, P = random_instance(rng)
        plan = plan_phantom(x, law, b, P)
        assert b.contains(plan.y)
        if plan.feasible:
            feasible += 1
            assert law.residual(plan.y, plan.d_hat) <= 1e-7
            assert plan.margin > 0
            a = ADV.attractiveness(plan.y, b)
            assert int(np.argmax(a)) == plan.target
            assert decide(ADV, plan.y, b).target_index in P
    assert feasible > 100


def test_lp_agrees_with_brute_force():
    rng = np.random.default_rng(23)
    compared = 0
    for _ in range(100):
        x, law, b, P = random_instance(rng)
        lp = plan_phantom(x, law, b, P)
        grid = brute_force_plan(x, law, b, P, grid_n=21)
        h = float(np.max((b.upper - b.lower) / 20))
        tol = 2 * h * lipschitz(b)
        lp_opt = lp.margin if lp.feasible else max(lp.margins.values(), default=-np.inf)
        if grid.feasible:
            assert lp_opt >= grid.margin - tol
        if lp.feasible and grid.feasible:
            compared += 1
            ranked = sorted(lp.margins.values(), reverse=True)
            if len(ranked) == 1 or ranked[0] - ranked[1] > 2 * tol:
                assert lp.target == grid.target
            else:
                assert grid.target in P
    assert compared > 50


def test_observed_bounds_confine_phantom_state():
    # bounds learned from traffic, narrower than configured
    rng = np.random.default_rng(8)
    for _ in range(50):
        x, law, _, P = random_instance(rng, coupled=False)
        n = law.n
        lo = rng.uniform(-1, 1, n)
        hi = lo + rng.uniform(0.5, 2, n)
        observed = Bounds(lo, hi, hi + 3)
        x_obs = rng.uniform(lo[: law.n_real], hi[: law.n_real])
        if law.k:
            law = ProcessLaw(law.n_real, law.n_phantom, law.C, law.C[:, : law.n_real] @ x_obs)
        plan = plan_phantom(x_obs, law, observed, P)
        assert np.all(plan.y >= lo) and np.all(plan.y <= hi)
