"""Coupled Riccati oracle for the scalar zero-sum LQ game."""
from __future__ import annotations

import numpy as np

from .core import DomainError, NumericalFailure

MAX_ITER = 100_000


class OracleFailure(NumericalFailure):
    pass


def _gains(P, A, B1, B2, R11, R22, gamma):
    # joint stationarity of -R11 a1^2 + R22 a2^2 + gamma P s'^2 in (a1, a2)
    den = 1.0 - gamma * P * (B1 * B1 / R11 - B2 * B2 / R22)
    if abs(den) < 1e-12:
        raise OracleFailure("singular best-response system")
    K1 = -gamma * P * B1 * A / (R11 * den)
    K2 = gamma * P * B2 * A / (R22 * den)
    return K1, K2


def riccati_step(P, A, B1, B2, Q, R11, R22, gamma):
    """One sweep of the value recursion; returns ``(P_new, K1, K2)``."""
    K1, K2 = _gains(P, A, B1, B2, R11, R22, gamma)
    acl = A - B1 * K1 - B2 * K2
    return Q - R11 * K1 * K1 + R22 * K2 * K2 + gamma * P * acl * acl, K1, K2


def riccati_oracle(A, B1, B2, Q=1.0, R11=1.0, R22=1.0, gamma=1.0, tol=1e-12):
    """Stationary saddle-point gains ``(K1, K2)`` with ``a_i = -K_i s``.

    Player 1 maximises ``sum gamma^k (Q s^2 - R11 a1^2 + R22 a2^2)`` and
    player 2 minimises it, so a standard LQR problem is ``Q < 0, B2 = 0``.
    Solved by fixed-point iteration on ``V(s) = P s^2`` from ``P = 0``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if R11 <= 0 or R22 <= 0:
        raise DomainError("control weights must be positive")
    P = 0.0
    for _ in range(MAX_ITER):
        P_new, K1, K2 = riccati_step(P, A, B1, B2, Q, R11, R22, gamma)
        if not np.isfinite(P_new) or abs(P_new) > 1e12:
            raise OracleFailure("value recursion diverged; check the sign convention")
        if abs(P_new - P) <= tol:
            K1, K2 = _gains(P_new, A, B1, B2, R11, R22, gamma)
            return K1 + 0.0, K2 + 0.0
        P = P_new
    raise OracleFailure(f"no convergence within {MAX_ITER} iterations")


def riccati_value(A, B1, B2, Q=1.0, R11=1.0, R22=1.0, gamma=1.0, tol=1e-12) -> float:
    """Converged value coefficient ``P``."""
    K1, K2 = riccati_oracle(A, B1, B2, Q, R11, R22, gamma, tol)
    acl = A - B1 * K1 - B2 * K2
    if gamma * acl * acl >= 1.0:
        raise OracleFailure("closed loop is not discounted-stable")
    return (Q - R11 * K1 * K1 + R22 * K2 * K2) / (1.0 - gamma * acl * acl)
