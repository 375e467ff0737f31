"""First- and second-order perturbation around the deterministic steady state.

Policy functions are written in terms of the lagged state vector and current
innovations, ``y_t = g(s_{t-1}, u_t, sigma)``, with ``s = P y`` selecting the
state rows.  The first-order part is found with an ordered QZ decomposition;
the second-order part solves a generalized Sylvester equation through the
complex Schur form of the state transition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .model import EquationSystem

STABLE_CUTOFF = 1e-8


class PerturbationError(RuntimeError):
    pass


class BlanchardKahnError(PerturbationError):
    """Wrong number of stable roots, or a root on the unit circle."""

    def __init__(self, message, n_stable=None, n_required=None):
        super().__init__(message)
        self.n_stable = n_stable
        self.n_required = n_required


@dataclass(frozen=True)
class Derivatives:
    """Jacobian blocks and Hessian of F at the steady state.

    ``hessian`` is indexed (equation, v, v) for the stacked argument
    ``v = (x_prev, x_curr, x_next, innovations)``.
    """

    f_prev: np.ndarray
    f_curr: np.ndarray
    f_next: np.ndarray
    f_shock: np.ndarray
    hessian: np.ndarray
    steady: np.ndarray
    states: np.ndarray
    names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.f_curr.shape[0]

    @property
    def jacobian(self) -> np.ndarray:
        return np.hstack([self.f_prev, self.f_curr, self.f_next, self.f_shock])


def differentiate(system: EquationSystem, ss) -> Derivatives:
    x = ss.vector if hasattr(ss, "vector") else np.asarray(ss, float)
    n = system.n_vars
    jac, hess = system.jacobian_and_hessian(system.stacked_point(x, x, x))
    if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(hess))):
        bad = sorted({system.equation_names[i] for i in np.argwhere(~np.isfinite(jac))[:, 0]}
                     | {system.equation_names[i] for i in np.argwhere(~np.isfinite(hess))[:, 0]})
        raise PerturbationError(f"non-finite derivatives in equations {bad}")
    states = system.variables.state_index
    stray = np.setdiff1d(np.flatnonzero(np.any(jac[:, :n] != 0, axis=0)), states)
    if stray.size:
        raise PerturbationError(f"lagged non-state variables {[system.variables.names[i] for i in stray]}")
    return Derivatives(jac[:, :n], jac[:, n:2 * n], jac[:, 2 * n:3 * n], jac[:, 3 * n:], hess,
                       x.copy(), states, system.variables.names)


@dataclass(frozen=True)
class FirstOrderSolution:
    """``y_t - ss = g_y s_{t-1} + g_u u_t`` with ``s = P (y - ss)``."""

    g_y: np.ndarray      # n x ns
    g_u: np.ndarray      # n x ne
    states: np.ndarray
    steady: np.ndarray
    eigenvalues: np.ndarray
    names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.g_y.shape[0]

    @property
    def transition(self) -> np.ndarray:
        return self.g_y[self.states]

    @property
    def impact(self) -> np.ndarray:
        return self.g_u[self.states]

    @property
    def jumps(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.states)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.transition)))) if len(self.states) else 0.0


def _select_states(n, states):
    P = np.zeros((len(states), n))
    P[np.arange(len(states)), states] = 1.0
    return P


def solve_first_order(d: Derivatives) -> FirstOrderSolution:
    n, states = d.n, d.states
    ns = len(states)
    P = _select_states(n, states)
    # X_t = (s_{t-1}, y_t);  A E[X_{t+1}] = B X_t
    A = np.block([[np.zeros((n, ns)), d.f_next], [np.eye(ns), np.zeros((ns, n))]])
    B = np.block([[-d.f_prev[:, states], -d.f_curr], [np.zeros((ns, ns)), P]])

    def stable(alpha, beta):
        return np.abs(alpha) < (1 - STABLE_CUTOFF) * np.abs(beta)

    S, T, alpha, beta, Q, Z = linalg.ordqz(B, A, sort=stable, output="complex")
    mod_a, mod_b = np.abs(alpha), np.abs(beta)
    near_unit = np.abs(mod_a - mod_b) <= STABLE_CUTOFF * np.maximum(mod_b, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        eig = np.where(mod_b > 0, alpha / np.where(mod_b > 0, beta, 1), np.inf)
    if np.any(near_unit & (mod_b > 0)):
        raise BlanchardKahnError(f"generalized eigenvalue within {STABLE_CUTOFF} of the unit circle: "
                                 f"{eig[near_unit][0]}")
    n_stable = int(np.sum(stable(alpha, beta)))
    if n_stable != ns:
        kind = "indeterminacy" if n_stable > ns else "no stable solution"
        raise BlanchardKahnError(
            f"Blanchard-Kahn violated ({kind}): {n_stable} stable roots for {ns} predetermined "
            f"variables ({len(eig) - n_stable} explosive for {n} non-predetermined)", n_stable, ns)
    Z11, Z21 = Z[:ns, :ns], Z[ns:, :ns]
    if np.linalg.cond(Z11) > 1e12:
        raise PerturbationError("stable subspace is not spanned by the states (singular Z11)")
    g_y = np.real(np.linalg.solve(Z11.T, Z21.T).T)
    lhs = d.f_curr + d.f_next @ g_y @ P
    g_u = -np.linalg.solve(lhs, d.f_shock)
    residual = d.f_prev[:, states] + d.f_curr @ g_y + d.f_next @ g_y @ P @ g_y
    scale = max(1.0, float(np.max(np.abs(d.f_curr))))
    if np.max(np.abs(residual)) > 1e-9 * scale:
        raise PerturbationError(f"first-order residual {np.max(np.abs(residual)):.3e}")
    order = np.argsort(-np.abs(eig))
    return FirstOrderSolution(g_y, g_u, states, d.steady, eig[order], d.names)


def first_order_residual(d: Derivatives, fo: FirstOrderSolution) -> float:
    P = _select_states(d.n, d.states)
    r1 = d.f_prev[:, d.states] + d.f_curr @ fo.g_y + d.f_next @ fo.g_y @ P @ fo.g_y
    r2 = d.f_curr @ fo.g_u + d.f_next @ fo.g_y @ P @ fo.g_u + d.f_shock
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


@dataclass(frozen=True)
class SecondOrderSolution:
    """Second-order terms on ``w = (s_{t-1}, u_t)``.

    ``g_ww`` is n x nw x nw (symmetric in the last two axes) and ``g_ss`` is
    the sigma^2 term; the constant shift of the policy function is
    ``0.5 * g_ss``.
    """

    first: FirstOrderSolution
    g_ww: np.ndarray
    g_ss: np.ndarray
    shock_cov: np.ndarray
    names: tuple[str, ...] = field(default=())

    @property
    def ns(self) -> int:
        return len(self.first.states)

    @property
    def g_yy(self):
        return self.g_ww[:, :self.ns, :self.ns]

    @property
    def g_yu(self):
        return self.g_ww[:, :self.ns, self.ns:]

    @property
    def g_uu(self):
        return self.g_ww[:, self.ns:, self.ns:]

    @property
    def risk_constant(self) -> np.ndarray:
        return 0.5 * self.g_ss

    @property
    def steady(self):
        return self.first.steady


def _chain_matrix(d: Derivatives, fo: FirstOrderSolution, extra_shock: bool = False) -> np.ndarray:
    """dv/dw for v = (x_prev, x_curr, x_next, u) and w = (s_{t-1}, u_t[, u_{t+1}])."""
    n, ns, ne = d.n, len(d.states), fo.g_u.shape[1]
    gs_y, gs_u = fo.g_y[d.states], fo.g_u[d.states]
    nw = ns + ne + (ne if extra_shock else 0)
    M = np.zeros((3 * n + ne, nw))
    M[d.states, np.arange(ns)] = 1.0
    M[n:2 * n, :ns] = fo.g_y
    M[n:2 * n, ns:ns + ne] = fo.g_u
    M[2 * n:3 * n, :ns] = fo.g_y @ gs_y
    M[2 * n:3 * n, ns:ns + ne] = fo.g_y @ gs_u
    if extra_shock:
        M[2 * n:3 * n, ns + ne:] = fo.g_u
    M[3 * n:, ns:ns + ne] = np.eye(ne)
    return M


def solve_sylvester(A: np.ndarray, B: np.ndarray, G: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Solve ``A X + B X (G kron G) = C`` for X (n x m^2) via the Schur form of G."""
    m = G.shape[0]
    T, U = linalg.schur(G.astype(complex), output="complex")
    UU = np.kron(U, U)
    K = np.kron(T, T)
    Ct = C.astype(complex) @ UU
    Y = np.zeros_like(Ct)
    diag_T = np.diag(T)
    for j in range(m * m):
        rhs = Ct[:, j]
        if j:
            rhs = rhs - B @ (Y[:, :j] @ K[:j, j])
        lhs = A + K[j, j] * B
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                lu = linalg.lu_factor(lhs, check_finite=False)
            if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.max(np.abs(lhs))):
                raise linalg.LinAlgError
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            a, b = divmod(j, m)
            raise PerturbationError(f"singular Sylvester block for eigenvalue pair "
                                    f"({diag_T[a]}, {diag_T[b]})") from None
        Y[:, j] = linalg.lu_solve(lu, rhs, check_finite=False)
    return np.real(Y @ UU.conj().T)


def solve_second_order(d: Derivatives, fo: FirstOrderSolution, shock_cov: np.ndarray) -> SecondOrderSolution:
    shock_cov = np.asarray(shock_cov, float)
    ne = fo.g_u.shape[1]
    if shock_cov.shape != (ne, ne):
        raise PerturbationError(f"shock covariance must be {ne}x{ne}")
    if np.any(np.linalg.eigvalsh((shock_cov + shock_cov.T) / 2) < -1e-14):
        raise PerturbationError("shock covariance is not positive semidefinite")
    n, states = d.n, d.states
    ns = len(states)
    P = _select_states(n, states)
    M = _chain_matrix(d, fo, extra_shock=True)
    nw = ns + ne
    MHM = np.einsum("ia,kab,bj->kij", M.T, d.hessian, M, optimize=True)
    H_ww = MHM[:, :nw, :nw]
    H_next = MHM[:, nw:, nw:]            # shocks of t+1 through x_next
    A = d.f_curr + d.f_next @ fo.g_y @ P
    Bm = d.f_next
    gs_y = fo.g_y[states]
    gs_w = np.hstack([gs_y, fo.g_u[states]])
    g_yy = solve_sylvester(A, Bm, gs_y, -H_ww[:, :ns, :ns].reshape(n, ns * ns))
    rhs = -H_ww.reshape(n, nw * nw) - Bm @ g_yy @ np.kron(gs_w, gs_w)
    g_ww = np.linalg.solve(A, rhs).reshape(n, nw, nw)
    g_ww = 0.5 * (g_ww + g_ww.transpose(0, 2, 1))
    g_uu = g_ww[:, ns:, ns:]
    rhs_s = -(Bm @ np.einsum("kab,ab->k", g_uu, shock_cov) + np.einsum("kab,ab->k", H_next, shock_cov))
    g_ss = np.linalg.solve(d.f_curr + d.f_next + d.f_next @ fo.g_y @ P, rhs_s)
    return SecondOrderSolution(fo, g_ww, g_ss, shock_cov, d.names)


def second_order_residual(d: Derivatives, so: SecondOrderSolution) -> float:
    """Max abs of the second-order chain-rule conditions (w-block and sigma-block)."""
    fo = so.first
    n, states = d.n, d.states
    ns, ne = len(states), fo.g_u.shape[1]
    nw = ns + ne
    P = _select_states(n, states)
    M = _chain_matrix(d, fo, extra_shock=True)
    MHM = np.einsum("ia,kab,bj->kij", M.T, d.hessian, M, optimize=True)
    gs_w = np.hstack([fo.g_y[states], fo.g_u[states]])
    g_yy = so.g_ww[:, :ns, :ns].reshape(n, ns * ns)
    r = (MHM[:, :nw, :nw].reshape(n, -1) + d.f_curr @ so.g_ww.reshape(n, -1)
         + d.f_next @ (g_yy @ np.kron(gs_w, gs_w) + fo.g_y @ P @ so.g_ww.reshape(n, -1)))
    r_s = ((d.f_curr + d.f_next + d.f_next @ fo.g_y @ P) @ so.g_ss
           + d.f_next @ np.einsum("kab,ab->k", so.g_uu, so.shock_cov)
           + np.einsum("kab,ab->k", MHM[:, nw:, nw:], so.shock_cov))
    return float(max(np.max(np.abs(r)), np.max(np.abs(r_s))))


@dataclass(frozen=True)
class PrunedState:
    """First- and second-order deviations of every variable, kept apart."""

    first: np.ndarray
    second: np.ndarray

    @classmethod
    def zero(cls, n: int) -> "PrunedState":
        return cls(np.zeros(n), np.zeros(n))


def step_pruned(sol: SecondOrderSolution | FirstOrderSolution, st: PrunedState,
                innovations) -> tuple[PrunedState, np.ndarray]:
    u = np.asarray(innovations, float)
    fo = sol.first if isinstance(sol, SecondOrderSolution) else sol
    s_f = st.first[fo.states]
    first = fo.g_y @ s_f + fo.g_u @ u
    if isinstance(sol, FirstOrderSolution):
        return PrunedState(first, st.second), fo.steady + first
    w = np.concatenate([s_f, u])
    second = (fo.g_y @ st.second[fo.states] + 0.5 * np.einsum("kab,a,b->k", sol.g_ww, w, w)
              + 0.5 * sol.g_ss)
    return PrunedState(first, second), fo.steady + first + second


def simulate_pruned(sol: SecondOrderSolution | FirstOrderSolution, innovations: np.ndarray,
                    start: PrunedState | None = None) -> np.ndarray:
    """Vectorised pruned recursion; row t holds levels after innovation t."""
    fo = sol.first if isinstance(sol, SecondOrderSolution) else sol
    shocks = np.atleast_2d(np.asarray(innovations, float))
    T = shocks.shape[0]
    st = start or PrunedState.zero(fo.n)
    Gf = fo.g_y[fo.states]
    ns = len(fo.states)
    sf = np.empty((T + 1, ns))
    sf[0] = st.first[fo.states]
    first = np.empty((T, fo.n))
    for t in range(T):
        first[t] = fo.g_y @ sf[t] + fo.g_u @ shocks[t]
        sf[t + 1] = Gf @ sf[t] + fo.g_u[fo.states] @ shocks[t]
    if isinstance(sol, FirstOrderSolution):
        return fo.steady + first
    w = np.hstack([sf[:-1], shocks])
    quad = 0.5 * np.einsum("kab,ta,tb->tk", sol.g_ww, w, w, optimize=True) + 0.5 * sol.g_ss
    second = np.empty((T, fo.n))
    prev = st.second[fo.states]
    for t in range(T):
        second[t] = fo.g_y @ prev + quad[t]
        prev = second[t, fo.states]
    return fo.steady + first + second


def state_covariance(fo: FirstOrderSolution, shock_cov: np.ndarray) -> np.ndarray:
    G, R = fo.transition, fo.impact
    return linalg.solve_discrete_lyapunov(G, R @ shock_cov @ R.T)


def pruned_mean(so: SecondOrderSolution) -> np.ndarray:
    """Unconditional mean of the pruned second-order law (levels)."""
    fo = so.first
    ns = len(fo.states)
    V = state_covariance(fo, so.shock_cov)
    const = 0.5 * (np.einsum("kab,ab->k", so.g_yy, V) + np.einsum("kab,ab->k", so.g_uu, so.shock_cov)
                   + so.g_ss)
    # second-order states: s2 = G s2 + P const; jumps follow from g_y s2 + const
    G = fo.transition
    s2 = np.linalg.solve(np.eye(ns) - G, const[fo.states])
    return fo.steady + fo.g_y @ s2 + const


def shock_covariance(sigma_shocks: dict[str, float], order) -> np.ndarray:
    return np.diag([float(sigma_shocks[name]) ** 2 for name in order])
