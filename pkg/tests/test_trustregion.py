import numpy as np
import pytest

from copo.core import DomainError, RngStream
from copo.envs import BilinearGame, collect_batch, matching_pennies, rock_paper_scissors
from copo.estimators import annotate, batch_kl, quadratic_kl
from copo.policies import dense_fisher, make_family
from copo.trustregion import (
    SurrogateProblem,
    TrustRegionConfig,
    TrustRegionFailure,
    lambda_init,
    solve_constrained_system,
    trcopo_step,
    trgda_step,
)


def mp_batch(seed=0, n=1000, theta=(np.array([0.4, -0.3]), np.array([-0.2, 0.5]))):
    env = matching_pennies()
    return annotate(collect_batch(env, env.families(), theta, n, RngStream(seed, 1)), advantage="mc")


def dense_oracle(p, lam):
    A11, A22, B12 = p.matrices()
    K = np.block([[lam * A11, -B12], [B12.T, lam * A22]])
    return np.linalg.solve(K, np.concatenate([p.g1, -p.g2]))


def test_decoupled_identity_system(rng):
    g1, g2 = rng.standard_normal(3), rng.standard_normal(2)
    p = SurrogateProblem.from_matrices(g1, g2, np.eye(3), np.eye(2), np.zeros((3, 2)))
    res = solve_constrained_system(p, 4.0)
    np.testing.assert_allclose(res.delta_theta.p1, g1 / 4, atol=1e-15)
    np.testing.assert_allclose(res.delta_theta.p2, -g2 / 4, atol=1e-15)
    assert not res.ridge


def test_dense_solution_matches_block_oracle():
    p = SurrogateProblem.from_batch(mp_batch())
    res = solve_constrained_system(p, 3.0)
    # the singular categorical Fisher is ridged; compare on the same regularised system
    assert res.ridge
    A11, A22, B12 = p.matrices()
    q = SurrogateProblem.from_matrices(p.g1, p.g2, A11 + 1e-8 * np.eye(2), A22 + 1e-8 * np.eye(2), B12)
    np.testing.assert_allclose(res.delta_theta.values, dense_oracle(q, 3.0), rtol=1e-9, atol=1e-9)


def test_schur_cg_matches_dense():
    env = rock_paper_scissors()
    b = annotate(collect_batch(env, env.families(), (np.array([0.3, 0, -0.2]), np.array([0, 0.4, 0.1])), 1000, RngStream(2)), advantage="mc")
    p = SurrogateProblem.from_batch(b)
    dense = solve_constrained_system(p, 2.0)
    cg = solve_constrained_system(p, 2.0, TrustRegionConfig(dense_max_dim=0))
    assert cg.ridge and cg.solver_iters > 0
    np.testing.assert_allclose(cg.delta_theta.values, dense.delta_theta.values, atol=1e-7)


def test_step_shrinks_with_lambda():
    p = SurrogateProblem.from_batch(mp_batch())
    norms = [np.linalg.norm(solve_constrained_system(p, lam).delta_theta.values) for lam in (1, 10, 100)]
    assert norms[0] > norms[1] > norms[2]
    cons = [solve_constrained_system(p, lam).constraint_value for lam in (1, 2, 4, 8, 16)]
    assert all(a >= b for a, b in zip(cons, cons[1:]))


def test_lambda_positive_required():
    with pytest.raises(DomainError):
        solve_constrained_system(SurrogateProblem.from_batch(mp_batch()), 0.0)


def test_lambda_init_properties(rng):
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    g = rng.standard_normal(2)
    sym = SurrogateProblem.from_matrices(g, g, A, A, np.zeros((2, 2)))
    lam = lambda_init(sym, 0.01)
    assert lam == pytest.approx(np.sqrt(g @ np.linalg.solve(A, g) / 0.01), rel=1e-12)
    big = SurrogateProblem.from_matrices(10 * g, 100 * g, A, A, np.zeros((2, 2)))
    assert lambda_init(big, 0.01) == pytest.approx(10 * lam, rel=1e-12)
    only2 = SurrogateProblem.from_matrices(np.zeros(2), g, A, A, np.zeros((2, 2)))
    assert lambda_init(only2, 0.01) == pytest.approx(lam, rel=1e-12)


def test_zero_gradients_give_zero_step():
    p = SurrogateProblem.from_matrices(np.zeros(2), np.zeros(2), np.eye(2), np.eye(2), np.ones((2, 2)))
    u = trcopo_step(p, TrustRegionConfig(delta=0.01))
    assert np.array_equal(u.delta.values, np.zeros(4))
    assert u.constraint_value == 0.0 and u.info["doublings"] == 0


def test_mp_step_respects_budget_tightly():
    u = trcopo_step(mp_batch(), TrustRegionConfig(delta=0.01))
    assert 0.01 / 4 < u.constraint_value <= 0.01


def test_huge_budget_accepts_first_lambda():
    u = trcopo_step(mp_batch(), TrustRegionConfig(delta=1e6, lambda0=0.5))
    assert u.lam == 0.5 and u.info["doublings"] == 0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("step", [trcopo_step, trgda_step])
def test_every_step_feasible(seed, step):
    env = BilinearGame()
    th = env.init_params(RngStream(seed, 0).generator())
    b = annotate(collect_batch(env, env.families(), th, 500, RngStream(seed, 1)), advantage="mc")
    for delta in (1e-4, 1e-3, 1e-1):
        u = step(b, TrustRegionConfig(delta=delta))
        assert u.constraint_value <= delta
        assert quadratic_kl(b, u.delta.p1, u.delta.p2) == pytest.approx(u.constraint_value, rel=1e-10)


def test_trgda_equals_trcopo_without_coupling(rng):
    g1, g2 = rng.standard_normal(2), rng.standard_normal(2)
    A = np.array([[1.0, 0.2], [0.2, 0.5]])
    p = SurrogateProblem.from_matrices(g1, g2, A, A, np.zeros((2, 2)))
    cfg = TrustRegionConfig(delta=0.01)
    np.testing.assert_array_equal(trgda_step(p, cfg).delta.values, trcopo_step(p, cfg).delta.values)


def test_trgda_is_natural_gradient_direction():
    b = mp_batch()
    p = SurrogateProblem.from_batch(b)
    u = trgda_step(b, TrustRegionConfig(delta=0.01))
    A11 = p.matrices()[0] + 1e-8 * np.eye(2)
    nat = np.linalg.solve(A11, p.g1)
    cos = u.delta.p1 @ nat / (np.linalg.norm(u.delta.p1) * np.linalg.norm(nat))
    assert cos == pytest.approx(1.0, abs=1e-9)


def test_line_search_gives_up():
    p = SurrogateProblem.from_matrices(np.ones(2), np.ones(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(TrustRegionFailure):
        trcopo_step(p, TrustRegionConfig(delta=1e-30, lambda0=1e-6, max_doublings=2))


def test_config_validation():
    with pytest.raises(DomainError):
        TrustRegionConfig(delta=0)
    with pytest.raises(DomainError):
        TrustRegionConfig(lambda0=-1.0)


def test_quadratic_constraint_tracks_exact_kl(rng):
    b = mp_batch(n=400)
    d = rng.standard_normal(4)
    errs = []
    for t in (1e-1, 1e-2, 1e-3):
        d1, d2 = t * d[:2], t * d[2:]
        errs.append(abs(0.5 * quadratic_kl(b, d1, d2) - batch_kl(b, b.theta1 + d1, b.theta2 + d2)))
    slope = np.polyfit(np.log([1e-1, 1e-2, 1e-3]), np.log(errs), 1)[0]
    assert slope > 2.6


def test_surrogate_prediction_first_order():
    # exact matching pennies: eta = p' M q, exact gradients and Fisher blocks
    fam = make_family("categorical", 2)
    M = np.array([[1.0, -1], [-1, 1]])
    t1, t2 = np.array([0.4, -0.3]), np.array([-0.2, 0.5])

    def eta(a, b):
        return fam.probs(a, np.zeros(0)) @ M @ fam.probs(b, np.zeros(0))

    h = 1e-6
    g1 = np.array([(eta(t1 + h * e, t2) - eta(t1 - h * e, t2)) / (2 * h) for e in np.eye(2)])
    g2 = np.array([(eta(t1, t2 + h * e) - eta(t1, t2 - h * e)) / (2 * h) for e in np.eye(2)])
    B12 = np.array(
        [[(eta(t1 + h * e, t2 + h * f) - eta(t1 + h * e, t2 - h * f) - eta(t1 - h * e, t2 + h * f) + eta(t1 - h * e, t2 - h * f)) / (4 * h * h) for f in np.eye(2)] for e in np.eye(2)]
    )
    p = SurrogateProblem.from_matrices(g1, g2, dense_fisher(fam, t1, None), dense_fisher(fam, t2, None), B12)
    u = trcopo_step(p, TrustRegionConfig(delta=0.01))
    errs = []
    for t in (1.0, 0.5, 0.25):
        d1, d2 = t * u.delta.p1, t * u.delta.p2
        predicted = g1 @ d1 + g2 @ d2
        errs.append(abs(eta(t1 + d1, t2 + d2) - eta(t1, t2) - predicted) / t)
    assert errs[0] > errs[1] > errs[2]


def test_mutual_gain_filter_runs():
    b = mp_batch()
    u = trcopo_step(b, TrustRegionConfig(delta=0.01, require_mutual_gain=True))
    if u.info.get("rejected"):
        assert np.array_equal(u.delta.values, np.zeros(4))
    else:
        assert u.constraint_value <= 0.01
