"""Disturbance-preview MPC: condensed QP over the input sequence.

The finite-horizon problem penalizes the glucose deviation and the distance
of the insulin command from the steady-state input that rejects the
previewed disturbance; states are eliminated, leaving a box-constrained QP
(plus one terminal equality in hard mode) solved by a primal active-set
method.  Plain MPC is the same controller with an all-zero preview.
"""

from dataclasses import dataclass, field

import numpy as np

from .linmodel import DiscreteModel, N_STATES


@dataclass(frozen=True)
class MpcConfig:
    n_horizon: int = 30
    q: float = 1.0               # output weight, per (mg/dl)^2
    r: float = 10.0              # input weight, per (mU/min)^2
    u_max: float = 100.0         # mU/min, absolute pump ceiling
    u_basal: float = 20.4        # mU/min
    terminal_mode: str = "soft"  # "soft" | "hard"
    terminal_weight: float | None = None  # defaults to 1e4 * q

    def __post_init__(self):
        if self.n_horizon < 1:
            raise ValueError("horizon must be at least 1 step")
        if self.q <= 0.0 or self.r <= 0.0:
            raise ValueError("weights must be positive")
        if not 0.0 < self.u_basal < self.u_max:
            raise ValueError("require 0 < u_basal < u_max")
        if self.terminal_mode not in ("soft", "hard"):
            raise ValueError(f"unknown terminal mode {self.terminal_mode!r}")
        if self.terminal_weight is None:
            object.__setattr__(self, "terminal_weight", 1e4 * self.q)


def steady_state_target(u_kis: float, model: DiscreteModel) -> tuple[np.ndarray, float]:
    """State/input pair that rejects a constant disturbance with zero output.

    Solves [[Ad - I, Bd], [Cd, 0]] [x_ss; u_ss] = [-Bd_kis * u_kis; 0].
    """
    s = _target_system(model)
    rhs = np.concatenate([-model.Bd_kis * float(u_kis), [0.0]])
    sol = np.linalg.solve(s, rhs)
    return sol[:N_STATES], float(sol[N_STATES])


def _target_system(model: DiscreteModel) -> np.ndarray:
    s = np.zeros((N_STATES + 1, N_STATES + 1))
    s[:N_STATES, :N_STATES] = model.Ad - np.eye(N_STATES)
    s[:N_STATES, N_STATES] = model.Bd
    s[N_STATES, :N_STATES] = model.Cd
    if abs(np.linalg.det(s)) < 1e-300 or np.linalg.cond(s) > 1e12:
        raise ValueError("steady-state target system is singular; "
                         "the model cannot reject output disturbances")
    return s


@dataclass(frozen=True)
class CftocProblem:
    x0: np.ndarray
    dist_preview: np.ndarray      # N disturbance values over the horizon
    model: DiscreteModel
    x_ss: np.ndarray              # (N, 12) per-step target states
    u_ss: np.ndarray              # (N,) per-step target inputs

    @classmethod
    def build(cls, x0: np.ndarray, dist_preview, model: DiscreteModel) -> "CftocProblem":
        preview = np.asarray(dist_preview, dtype=float)
        x1, u1 = steady_state_target(1.0, model)
        return cls(x0=np.asarray(x0, dtype=float), dist_preview=preview,
                   model=model, x_ss=np.outer(preview, x1), u_ss=u1 * preview)


@dataclass
class CondensedQp:
    h: np.ndarray
    f: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    a_eq: np.ndarray | None
    b_eq: float
    const: float
    soft_fallback: "CondensedQp | None" = None


@dataclass(frozen=True)
class CftocSolution:
    u_seq: np.ndarray
    j_star: float
    status: str                  # "optimal" | "soft-fallback" | "infeasible"
    iterations: int = 0


def _prediction_matrices(model: DiscreteModel, n: int):
    """Output maps y_{1..N} = Phi x0 + G u + Gd d for the condensed problem."""
    cd, ad = model.Cd, model.Ad
    rows = np.empty((n + 1, N_STATES))
    rows[0] = cd
    for k in range(n):
        rows[k + 1] = rows[k] @ ad
    h_markov = rows[:n] @ model.Bd        # Cd Ad^m Bd
    g_markov = rows[:n] @ model.Bd_kis
    gmat = np.zeros((n, n))
    dmat = np.zeros((n, n))
    for i in range(n):
        gmat[i, :i + 1] = h_markov[i::-1]
        dmat[i, :i + 1] = g_markov[i::-1]
    phi = rows[1:]                        # Cd Ad^{k}, k = 1..N
    return phi, gmat, dmat


def build_qp(problem: CftocProblem, config: MpcConfig) -> CondensedQp:
    """Condense the CFTOC into a box QP over the input sequence."""
    n = config.n_horizon
    if len(problem.dist_preview) != n:
        raise ValueError(f"preview length {len(problem.dist_preview)} != horizon {n}")
    phi, gmat, dmat = _prediction_matrices(problem.model, n)
    off = phi @ problem.x0 + dmat @ problem.dist_preview
    lb = np.full(n, -config.u_basal)
    ub = np.full(n, config.u_max - config.u_basal)
    y0 = float(problem.model.Cd @ problem.x0)

    def assemble(weights, a_eq, b_eq):
        wg = weights[:, None] * gmat
        h = 2.0 * (gmat.T @ wg + config.r * np.eye(n))
        f = 2.0 * (wg.T @ off - config.r * problem.u_ss)
        const = float(off @ (weights * off) + config.r * problem.u_ss @ problem.u_ss
                      + config.q * y0 * y0)
        return CondensedQp(h=h, f=f, lb=lb, ub=ub, a_eq=a_eq, b_eq=b_eq, const=const)

    w_soft = np.full(n, config.q)
    w_soft[-1] = config.terminal_weight
    soft = assemble(w_soft, None, 0.0)
    if config.terminal_mode == "soft":
        return soft
    w_hard = np.full(n, config.q)
    w_hard[-1] = 0.0  # y_N handled by the equality row
    hard = assemble(w_hard, gmat[-1].copy(), -float(off[-1]))
    hard.soft_fallback = soft
    return hard


def _equality_feasible(a, b, lb, ub, tol=1e-9):
    lo = float(np.minimum(a * lb, a * ub).sum())
    hi = float(np.maximum(a * lb, a * ub).sum())
    return lo - tol <= b <= hi + tol


def _feasible_start(x0, lb, ub, a, b):
    """Project a guess onto the box (and the equality hyperplane if present)."""
    x = np.clip(x0, lb, ub)
    if a is None:
        return x
    g = lambda nu: float(a @ np.clip(x0 + nu * a, lb, ub))
    lo, hi = -1.0, 1.0
    for _ in range(100):
        if g(lo) <= b:
            break
        lo *= 2.0
    for _ in range(100):
        if g(hi) >= b:
            break
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < b:
            lo = mid
        else:
            hi = mid
    x = np.clip(x0 + hi * a, lb, ub)
    # snap: correct the residual on the most adjustable free coordinate
    resid = b - float(a @ x)
    order = np.argsort(-np.abs(a))
    for j in order:
        if a[j] == 0.0:
            break
        step = resid / a[j]
        new = np.clip(x[j] + step, lb[j], ub[j])
        resid -= a[j] * (new - x[j])
        x[j] = new
        if abs(resid) < 1e-12:
            break
    return x


def solve_qp(qp: CondensedQp, warm_start: np.ndarray | None = None,
             max_iter: int | None = None) -> CftocSolution:
    """Primal active-set solve of the condensed QP.

    Falls back to the attached soft formulation (status "soft-fallback")
    when the hard terminal equality is infeasible over the input box.
    """
    if qp.a_eq is not None and not _equality_feasible(qp.a_eq, qp.b_eq, qp.lb, qp.ub):
        if qp.soft_fallback is None:
            return CftocSolution(u_seq=np.clip(np.zeros_like(qp.f), qp.lb, qp.ub),
                                 j_star=np.inf, status="infeasible")
        sol = solve_qp(qp.soft_fallback, warm_start=warm_start, max_iter=max_iter)
        return CftocSolution(u_seq=sol.u_seq, j_star=sol.j_star,
                             status="soft-fallback", iterations=sol.iterations)
    x, iters = _active_set(qp.h, qp.f, qp.lb, qp.ub, qp.a_eq, qp.b_eq,
                           warm_start, max_iter)
    j = 0.5 * x @ qp.h @ x + qp.f @ x + qp.const
    return CftocSolution(u_seq=x, j_star=float(j), status="optimal", iterations=iters)


def _active_set(h, f, lb, ub, a, b, warm, max_iter):
    n = len(f)
    max_iter = max_iter or (50 * n + 100)
    scale = max(np.abs(f).max(), np.abs(h).max(), 1.0)
    tol_b = 1e-11 * max(np.abs(lb).max(), np.abs(ub).max(), 1.0)
    tol_d = 1e-9 * scale
    start = warm if warm is not None else np.zeros(n)
    x = _feasible_start(start, lb, ub, a, b)
    lower = np.abs(x - lb) <= tol_b
    upper = np.abs(x - ub) <= tol_b

    for it in range(1, max_iter + 1):
        active = lower | upper
        free = ~active
        target = x.copy()
        mu = None
        if free.any():
            hff = h[np.ix_(free, free)]
            rhs = -(f[free] + h[np.ix_(free, active)] @ x[active])
            if a is not None and np.abs(a[free]).max() > 1e-14:
                nf = free.sum()
                kkt = np.zeros((nf + 1, nf + 1))
                kkt[:nf, :nf] = hff
                kkt[:nf, nf] = a[free]
                kkt[nf, :nf] = a[free]
                rhs_kkt = np.concatenate([rhs, [b - a[active] @ x[active]]])
                sol = np.linalg.solve(kkt, rhs_kkt)
                target[free] = sol[:nf]
                mu = float(sol[nf])
            else:
                target[free] = np.linalg.solve(hff, rhs)

        p = target - x
        if np.abs(p).max() > 1e-13 * max(1.0, np.abs(x).max()):
            # ratio test toward the equality-consistent Newton point
            alpha = 1.0
            block = -1
            block_side = None
            for i in np.flatnonzero(free):
                if p[i] > 0 and x[i] + p[i] > ub[i]:
                    ai = (ub[i] - x[i]) / p[i]
                    if ai < alpha:
                        alpha, block, block_side = ai, i, "ub"
                elif p[i] < 0 and x[i] + p[i] < lb[i]:
                    ai = (lb[i] - x[i]) / p[i]
                    if ai < alpha:
                        alpha, block, block_side = ai, i, "lb"
            x = x + alpha * p
            if block >= 0:
                if block_side == "ub":
                    x[block] = ub[block]
                    upper[block] = True
                else:
                    x[block] = lb[block]
                    lower[block] = True
                continue
            x[free] = target[free]

        # stationary on the working set: check bound multipliers
        g = h @ x + f
        if a is None:
            viol_lo = np.where(lower, -g, -np.inf)
            viol_up = np.where(upper, g, -np.inf)
            worst = max(viol_lo.max(initial=-np.inf), viol_up.max(initial=-np.inf))
            if worst <= tol_d:
                return x, it
            if viol_lo.max(initial=-np.inf) >= viol_up.max(initial=-np.inf):
                lower[int(np.argmax(viol_lo))] = False
            else:
                upper[int(np.argmax(viol_up))] = False
            continue

        # with the equality: multipliers are g + mu*a on the working set
        if mu is not None:
            gm = g + mu * a
            viol_lo = np.where(lower, -gm, -np.inf)
            viol_up = np.where(upper, gm, -np.inf)
            worst = max(viol_lo.max(initial=-np.inf), viol_up.max(initial=-np.inf))
            if worst <= tol_d:
                return x, it
            if viol_lo.max(initial=-np.inf) >= viol_up.max(initial=-np.inf):
                lower[int(np.argmax(viol_lo))] = False
            else:
                upper[int(np.argmax(viol_up))] = False
            continue

        # all equality weight sits on active bounds: mu is free, look for a
        # value making every working-set multiplier feasible
        mu_lo, i_lo = -np.inf, -1
        mu_hi, i_hi = np.inf, -1
        drop = -1
        for i in np.flatnonzero(lower | upper):
            want_nonneg = lower[i]  # lower bound needs (g + mu a) >= 0
            gi, ai = g[i], a[i]
            if ai == 0.0:
                ok = gi >= -tol_d if want_nonneg else gi <= tol_d
                if not ok:
                    drop = i
                    break
                continue
            bound = -gi / ai
            is_lower_cut = (ai > 0) == want_nonneg
            if is_lower_cut:
                if bound > mu_lo:
                    mu_lo, i_lo = bound, i
            else:
                if bound < mu_hi:
                    mu_hi, i_hi = bound, i
        if drop < 0:
            if mu_lo <= mu_hi + tol_d / max(np.abs(a).max(), 1e-14):
                return x, it
            drop = i_lo if i_lo >= 0 else i_hi
        lower[drop] = False
        upper[drop] = False

    raise RuntimeError(f"active-set solver failed to converge in {max_iter} iterations")


def kkt_residual(qp: CondensedQp, x: np.ndarray) -> float:
    """Max KKT violation of a candidate solution (stationarity projected on
    the box, bound feasibility, equality feasibility)."""
    g = qp.h @ x + qp.f
    if qp.a_eq is not None:
        # choose the mu minimizing the projected stationarity residual
        free = (x > qp.lb + 1e-9) & (x < qp.ub - 1e-9)
        if free.any() and np.abs(qp.a_eq[free]).max() > 1e-14:
            af, gf = qp.a_eq[free], g[free]
            mu = -float(af @ gf) / float(af @ af)
        else:
            mu = 0.0
        g = g + mu * qp.a_eq
    r_stat = np.abs(x - np.clip(x - g, qp.lb, qp.ub)).max()
    r_bounds = max(float((qp.lb - x).max(initial=0.0)), float((x - qp.ub).max(initial=0.0)))
    r_eq = abs(float(qp.a_eq @ x) - qp.b_eq) if qp.a_eq is not None else 0.0
    return max(r_stat, r_bounds, r_eq)


class MpcController:
    """Receding-horizon controller with precomputed condensing matrices."""

    def __init__(self, model: DiscreteModel, config: MpcConfig):
        self.model = model
        self.config = config
        n = config.n_horizon
        self._phi, self._gmat, self._dmat = _prediction_matrices(model, n)
        self._x_ss1, self._u_ss1 = steady_state_target(1.0, model)
        w = np.full(n, config.q)
        if config.terminal_mode == "soft":
            w[-1] = config.terminal_weight
        else:
            w[-1] = 0.0
        self._weights = w
        self._wg = w[:, None] * self._gmat
        self._h = 2.0 * (self._gmat.T @ self._wg + config.r * np.eye(n))
        self._lb = np.full(n, -config.u_basal)
        self._ub = np.full(n, config.u_max - config.u_basal)
        self._warm: np.ndarray | None = None
        # soft-mode companion for hard-mode fallbacks
        if config.terminal_mode == "hard":
            w_soft = np.full(n, config.q)
            w_soft[-1] = config.terminal_weight
            self._w_soft = w_soft
            self._wg_soft = w_soft[:, None] * self._gmat
            self._h_soft = 2.0 * (self._gmat.T @ self._wg_soft + config.r * np.eye(n))

    def problem(self, x_hat: np.ndarray, gp_preview) -> CftocProblem:
        preview = np.asarray(gp_preview, dtype=float)
        return CftocProblem(x0=np.asarray(x_hat, dtype=float), dist_preview=preview,
                            model=self.model, x_ss=np.outer(preview, self._x_ss1),
                            u_ss=self._u_ss1 * preview)

    def _qp(self, x_hat, preview) -> CondensedQp:
        cfg = self.config
        off = self._phi @ x_hat + self._dmat @ preview
        u_ss = self._u_ss1 * preview
        y0 = float(self.model.Cd @ x_hat)
        f = 2.0 * (self._wg.T @ off - cfg.r * u_ss)
        const = float(off @ (self._weights * off) + cfg.r * u_ss @ u_ss
                      + cfg.q * y0 * y0)
        qp = CondensedQp(h=self._h, f=f, lb=self._lb, ub=self._ub,
                         a_eq=None, b_eq=0.0, const=const)
        if cfg.terminal_mode == "hard":
            qp.a_eq = self._gmat[-1]
            qp.b_eq = -float(off[-1])
            f_soft = 2.0 * (self._wg_soft.T @ off - cfg.r * u_ss)
            const_soft = float(off @ (self._w_soft * off) + cfg.r * u_ss @ u_ss
                               + cfg.q * y0 * y0)
            qp.soft_fallback = CondensedQp(h=self._h_soft, f=f_soft, lb=self._lb,
                                           ub=self._ub, a_eq=None, b_eq=0.0,
                                           const=const_soft)
        return qp

    def solve(self, x_hat: np.ndarray, gp_preview) -> CftocSolution:
        preview = np.asarray(gp_preview, dtype=float)
        if len(preview) != self.config.n_horizon:
            raise ValueError("preview length must equal the horizon")
        sol = solve_qp(self._qp(x_hat, preview), warm_start=self._warm)
        self._warm = np.append(sol.u_seq[1:], sol.u_seq[-1])
        return sol

    def step(self, x_hat: np.ndarray, gp_preview) -> tuple[float, CftocSolution]:
        """Absolute pump command (mU/min) for the current state estimate."""
        sol = self.solve(x_hat, gp_preview)
        command = float(np.clip(self.config.u_basal + sol.u_seq[0],
                                0.0, self.config.u_max))
        return command, sol

    def reset(self) -> None:
        self._warm = None


def control_step(x_hat: np.ndarray, gp_preview, model: DiscreteModel,
                 config: MpcConfig) -> float:
    """One-shot pump command; plain MPC is gp_preview = zeros."""
    return MpcController(model, config).step(x_hat, gp_preview)[0]
