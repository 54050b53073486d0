"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line (shown in the terminal summary) and
asserts the criterion at its stated tolerance.
"""
import time

import numpy as np
import pytest

from copo.config import RunConfig
from copo.core import RngStream
from copo.envs import BilinearGame, LQGame, SoccerGame, collect_batch, matching_pennies, rock_paper_scissors
from copo.estimators import (
    GameTerms,
    annotate,
    bilinear_dense,
    bilinear_matvec,
    gae,
    grad_eta,
    mc_returns,
)
from copo.optim import CgConfig, cg_solve, copg_step, gda_step, truncated_step
from copo.policies import dense_fisher, kl_exact, log_prob, make_family, score
from copo.riccati import riccati_oracle
from copo.tournament import tournament
from copo.training import train

pytestmark = pytest.mark.acceptance

SEEDS = range(8)


def run(**kw):
    t0 = time.perf_counter()
    res = train(RunConfig(**kw))
    return res, time.perf_counter() - t0


def norm_mu(res):
    return float(np.hypot(res.theta1[0], res.theta2[0]))


# ----------------------------------------------------------------------- 1


def test_criterion_1_matrix_games(acceptance):
    details, ok = [], True
    slowest = 0.0
    for game in ("mp", "rps"):
        reached, gda_final = 0, []
        for seed in SEEDS:
            c, tc = run(game=game, optimizer="copg", alpha=0.5, batch_size=1000, epochs=2000, seed=seed, stop_at_threshold=True)
            g, tg = run(game=game, optimizer="gda", alpha=0.5, batch_size=1000, epochs=2000, seed=seed)
            slowest = max(slowest, tc, tg)
            reached += c.ok and c.epochs_to_threshold(0.05) is not None
            gda_final.append(g.final_nash_distance if g.ok else np.inf)
        game_ok = reached >= 7 and min(gda_final) > 0.2
        ok &= game_ok
        details.append(f"{game}: CoPG reached 0.05 on {reached}/8, GDA min final {min(gda_final):.3f}")
    ok &= slowest < 120
    acceptance(1, ok, "; ".join(details) + f"; slowest run {slowest:.0f}s")
    assert ok


# ----------------------------------------------------------------------- 2


def test_criterion_2_bilinear(acceptance):
    t0 = time.perf_counter()
    env = BilinearGame()
    copg_hits, gda_grew = 0, 0
    for seed in SEEDS:
        init = env.init_params(RngStream(seed, 0).generator())
        init_norm = float(np.hypot(init[0][0], init[1][0]))
        c, _ = run(game="bilinear", optimizer="copg", alpha=0.1, batch_size=1000, epochs=1000, seed=seed, stop_at_threshold=True)
        g, _ = run(game="bilinear", optimizer="gda", alpha=0.1, batch_size=1000, epochs=1000, seed=seed)
        copg_hits += c.ok and c.epochs_to_threshold(0.05) is not None
        gda_grew += (not g.ok) or not np.isfinite(norm_mu(g)) or norm_mu(g) > init_norm
    elapsed = time.perf_counter() - t0
    ok = copg_hits == 8 and gda_grew == 8 and elapsed < 60
    acceptance(2, ok, f"CoPG |mu|<0.05 on {copg_hits}/8, GDA norm grew on {gda_grew}/8, {elapsed:.0f}s")
    assert ok


# ----------------------------------------------------------------------- 3

PUBLISHED_GAINS = (-0.5735, -0.3059)


def lq_runs(alpha, epochs):
    """Per seed: (first epoch below 0.02, converged at the end) for CoPG then GDA."""
    out = []
    for seed in SEEDS:
        pair = []
        for opt in ("copg", "gda"):
            r, _ = run(game="lq", optimizer=opt, alpha=alpha, batch_size=1000, epochs=epochs, seed=seed)
            pair.append((r.epochs_to_threshold(0.02) if r.ok else None, r.ok and r.final_nash_distance < 0.02))
        out.append(tuple(pair))
    return out


def test_criterion_3_lq(acceptance):
    t0 = time.perf_counter()
    k = riccati_oracle(0.9, 0.8, 1.5)
    ok_a = abs(k[0] - PUBLISHED_GAINS[0]) <= 1e-3 and abs(k[1] - PUBLISHED_GAINS[1]) <= 1e-3

    slow = lq_runs(0.01, 1000)
    both = sum(c[1] and g[1] for c, g in slow)
    ordered = sum(c[0] is not None and g[0] is not None and c[0] <= g[0] for c, g in slow)
    ok_b = both == 8 and ordered == 8

    fast = lq_runs(0.1, 1000)
    copg_conv = sum(c[1] for c, _ in fast)
    gda_fail = sum(g[0] is None for _, g in fast)
    ok_c = copg_conv == 8 and gda_fail == 8

    elapsed = time.perf_counter() - t0
    ok = ok_a and ok_b and ok_c and elapsed < 600
    first_hits = [(c[0], g[0]) for c, g in slow]
    acceptance(
        3,
        ok,
        f"(a) {'ok' if ok_a else 'FAIL'} oracle K=({k[0]:.4f}, {k[1]:.4f}) vs {PUBLISHED_GAINS}; "
        f"(b) {'ok' if ok_b else 'FAIL'} both converged {both}/8, CoPG<=GDA {ordered}/8, first hits (CoPG, GDA) {first_hits}; "
        f"(c) {'ok' if ok_c else 'FAIL'} CoPG converged {copg_conv}/8, GDA failed {gda_fail}/8; {elapsed:.0f}s",
    )
    assert ok


# ----------------------------------------------------------------------- 4


def test_criterion_4_trust_region(acceptance):
    t0 = time.perf_counter()
    details, ok = [], True
    for game, delta in (("mp", 0.01), ("rps", 0.001), ("bilinear", 0.001)):
        tr_hits, trgda_miss = 0, 0
        for seed in SEEDS:
            c, _ = run(game=game, optimizer="trcopo", delta=delta, batch_size=1000, epochs=2000, seed=seed, stop_at_threshold=True)
            g, _ = run(game=game, optimizer="trgda", delta=delta, batch_size=1000, epochs=2000, seed=seed, stop_at_threshold=True)
            tr_hits += c.ok and c.epochs_to_threshold(0.05) is not None
            trgda_miss += (not g.ok) or g.epochs_to_threshold(0.05) is None
        ok &= tr_hits >= 7 and trgda_miss == 8
        details.append(f"{game}: TRCoPO {tr_hits}/8, TRGDA missed {trgda_miss}/8")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    acceptance(4, ok, "; ".join(details) + f"; {elapsed:.0f}s")
    assert ok


# ----------------------------------------------------------------------- 5

SOCCER_ALPHA = 0.01


def test_criterion_5_soccer(acceptance):
    t0 = time.perf_counter()
    env = SoccerGame()
    fam = env.families()[0]
    rates = []
    for seed in range(6):
        c, _ = run(game="soccer", optimizer="copg", alpha=SOCCER_ALPHA, batch_size=10, epochs=5000, seed=seed)
        g, _ = run(game="soccer", optimizer="gda", alpha=SOCCER_ALPHA, batch_size=10, epochs=5000, seed=seed)
        assert c.ok and g.ok
        stats = tournament(env, fam, c.theta1, fam, g.theta1, 2000, seed=seed)
        rates.append(stats.win_rate_A)
    wins = sum(r > 0.55 for r in rates)
    elapsed = time.perf_counter() - t0
    ok = wins >= 4 and elapsed < 3600
    acceptance(5, ok, f"CoPG win rates {[round(r, 3) for r in rates]}, >0.55 on {wins}/6; {elapsed:.0f}s")
    assert ok


# ----------------------------------------------------------------------- 6


def _is_eta(b, t1, t2):
    lr = (
        b.fam1.log_prob(t1, b.feats1, b.actions1)
        + b.fam2.log_prob(t2, b.feats2, b.actions2)
        - b.fam1.log_prob(b.theta1, b.feats1, b.actions1)
        - b.fam2.log_prob(b.theta2, b.feats2, b.actions2)
    )
    return float(np.mean(np.exp(lr[:, 0]) * b.rewards[:, 0]))


def _fd_check(env, seed):
    th = env.init_params(RngStream(seed, 0).generator())
    b = annotate(collect_batch(env, env.families(), th, 2000, RngStream(seed, 1)), advantage="mc")
    h, worst = 1e-4, 0.0
    for player in (1, 2):
        base = b.theta1 if player == 1 else b.theta2
        fd = []
        for e in np.eye(base.size):
            p = (b.theta1 + h * e, b.theta2) if player == 1 else (b.theta1, b.theta2 + h * e)
            m = (b.theta1 - h * e, b.theta2) if player == 1 else (b.theta1, b.theta2 - h * e)
            fd.append((_is_eta(b, *p) - _is_eta(b, *m)) / (2 * h))
        g = grad_eta(b, player)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    return worst


def test_criterion_6_estimator_properties(acceptance):
    t0 = time.perf_counter()
    gen = np.random.default_rng(0)
    checks = {}

    checks["fd_gradient"] = max(_fd_check(f(), 3) for f in (matching_pennies, rock_paper_scissors, BilinearGame)) <= 1e-3

    worst = 0.0
    for env in (matching_pennies(), rock_paper_scissors()):
        th = env.init_params(RngStream(1, 0).generator())
        b = annotate(collect_batch(env, env.families(), th, 500, RngStream(1, 1)), advantage="mc")
        D = bilinear_dense(b)
        cols = np.stack([bilinear_matvec(b, 12, e) for e in np.eye(D.shape[1])], axis=1)
        worst = max(worst, np.max(np.abs(cols - D)))
    checks["dense_vs_matvec"] = worst <= 1e-12

    env = LQGame()
    b = annotate(collect_batch(env, env.families(), env.init_params(), 500, RngStream(2)))
    worst = 0.0
    for _ in range(10):
        v, w = gen.standard_normal(3), gen.standard_normal(3)
        worst = max(worst, abs(w @ bilinear_matvec(b, 12, v) - v @ bilinear_matvec(b, 21, w)))
    checks["transpose"] = worst <= 1e-12

    r, v = gen.standard_normal(7), gen.standard_normal(7)
    delta = r + 0.9 * np.append(v[1:], 0.0) - v
    checks["gae_endpoints"] = np.array_equal(gae(r, v, 0.9, 0.0), delta) and np.allclose(
        gae(r, np.zeros(7), 0.9, 1.0), mc_returns(r, 0.9), rtol=0, atol=1e-14
    )

    worst = 0.0
    for fam in (make_family("categorical", 3), make_family("linear_softmax", 5, 4)):
        th, phi = gen.standard_normal(fam.param_dim), gen.standard_normal(fam.feature_dim)
        tot = sum(np.exp(log_prob(fam, th, phi, a)) * score(fam, th, phi, a) for a in range(fam.action_dim))
        worst = max(worst, np.max(np.abs(tot)))
    checks["score_identity"] = worst <= 1e-14

    slopes = []
    for fam in (make_family("categorical", 3), make_family("gaussian_linear", 1, 2)):
        th, phi = 0.5 * gen.standard_normal(fam.param_dim), gen.standard_normal(fam.feature_dim)
        d = gen.standard_normal(fam.param_dim)
        d /= np.linalg.norm(d)
        F = dense_fisher(fam, th, phi)
        ts = np.array([1e-1, 1e-2, 1e-3])
        err = [abs(kl_exact(fam, th, th + t * d, phi) - 0.5 * t * t * d @ F @ d) for t in ts]
        slopes.append(np.polyfit(np.log(ts), np.log(err), 1)[0])
    checks["kl_cubic"] = all(2.6 < s < 3.4 for s in slopes)

    M = gen.standard_normal((6, 6))
    A = M @ M.T + np.eye(6)
    rhs = gen.standard_normal(6)
    x, _, _ = cg_solve(lambda u: A @ u, rhs, CgConfig(tol=1e-13))
    checks["cg_direct"] = np.max(np.abs(x - np.linalg.solve(A, rhs))) <= 1e-10

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    acceptance(6, ok, f"{len(checks) - len(failed)}/{len(checks)} properties hold{' (failed: ' + ', '.join(failed) + ')' if failed else ''}; {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------------- 7


def test_criterion_7_optimizer_identities(acceptance):
    t0 = time.perf_counter()
    gen = np.random.default_rng(1)
    checks = {}

    t = GameTerms.from_matrix(gen.standard_normal(3), gen.standard_normal(2), gen.standard_normal((3, 2)))
    checks["neumann0_is_gda"] = truncated_step(t, 0.3, 0).delta.values.tobytes() == gda_step(t.g1, t.g2, 0.3).delta.values.tobytes()

    env = BilinearGame()
    b = annotate(collect_batch(env, env.families(), env.init_params(RngStream(0, 0).generator()), 1000, RngStream(0, 1)), advantage="mc")
    diff = truncated_step(b, 0.1, 40).delta.values - copg_step(b, 0.1, CgConfig(tol=1e-14)).delta.values
    checks["neumann_limit"] = np.linalg.norm(diff) <= 1e-8

    scalar = GameTerms.from_matrix([1.0], [1.0], [[1.0]])
    new = np.array([1.0, 1.0]) + copg_step(scalar, 0.5).delta.values
    checks["closed_form"] = np.max(np.abs(new - [1.2, 0.4])) <= 1e-12

    budget_ok = True
    for game, delta in (("mp", 0.01), ("rps", 0.001), ("bilinear", 0.001)):
        for opt in ("trcopo", "trgda"):
            res = train(RunConfig(game=game, optimizer=opt, delta=delta, batch_size=500, epochs=20, seed=5))
            budget_ok &= res.ok and all(r["constraint_value"] <= delta for r in res.rows)
    checks["tr_budget"] = budget_ok

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    acceptance(7, ok, f"{len(checks) - len(failed)}/{len(checks)} identities hold{' (failed: ' + ', '.join(failed) + ')' if failed else ''}; {elapsed:.1f}s")
    assert ok
