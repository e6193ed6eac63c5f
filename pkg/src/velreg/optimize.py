"""Limited-memory quasi-Newton driver and the multi-stage registration
loop.

The optimizer is unconstrained L-BFGS with two-loop recursion and a
strong-Wolfe line search (bracket + zoom with cubic interpolation).
Registration runs a sequence of stationary velocity fields: each stage
starts from a zero control, minimizes the objective with the previous
stage's deformed image as its fixed initial condition, and hands the
newly deformed image to the next stage.  Concatenating the per-stage
transports equals one transport with a velocity that is piecewise
constant in time; it is not equivalent to optimizing all stages jointly.
"""

import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .adjoint import evaluate_objective_and_gradient
from .control import ControlChain, SmootherConfig
from .objective import ObjectiveConfig, default_delta, l2_discrepancy
from .transport import DEFAULT_EPSILON, TransportProblem, TransportSolver


@dataclass(frozen=True)
class StageConfig:
    """Hyperparameters of one registration stage."""

    alpha: float = 0.0
    beta: float = 1.0
    gamma: float = 1e-2
    delta: float | None = None      # None: 0.1 x (p1..p99 target range)
    epsilon: float = DEFAULT_EPSILON
    max_iters: int = 100
    lbfgs_memory: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    gtol_rel: float = 1e-8
    gtol_abs: float = 1e-12
    N: int = 100
    T: float = 1.0
    cg_tol: float = 1e-10
    cg_maxit: int = 10_000

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")


@dataclass(eq=False)
class IterRecord:
    iteration: int
    value: float
    grad_norm: float
    step: float
    aux: dict = dataclass_field(default_factory=dict)


@dataclass(eq=False)
class LbfgsResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    trace: list          # IterRecord per accepted iterate, incl. start
    status: str          # converged | max-iters | line-search-failure
    n_evals: int
    aux: dict


def _call(fun, x):
    out = fun(x)
    if len(out) == 2:
        f, g = out
        aux = {}
    else:
        f, g, aux = out
    return float(f), np.asarray(g, dtype=float), aux


def lbfgs_minimize(fun, x0, config):
    """Minimize fun (returning (value, gradient[, aux])) from x0.

    Every accepted step satisfies the strong Wolfe conditions; on a
    line-search failure the best iterate found so far is returned with a
    warning status instead of raising.
    """
    x = np.array(x0, dtype=float)
    f, g, aux = _call(fun, x)
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise ValueError("objective not finite at the starting point")
    evals = 1
    g_norm = float(np.linalg.norm(g))
    gtol = max(config.gtol_rel * g_norm, config.gtol_abs)
    trace = [IterRecord(0, f, g_norm, 0.0, aux)]

    s_hist, y_hist, rho_hist = [], [], []
    status = "max-iters"
    if g_norm <= gtol:
        status = "converged"
        return LbfgsResult(x, f, g, trace, status, evals, aux)

    for it in range(1, config.max_iters + 1):
        p = _two_loop_direction(g, s_hist, y_hist, rho_hist)
        dphi0 = float(g @ p)
        if dphi0 >= 0:
            # stale curvature; restart from steepest descent
            s_hist, y_hist, rho_hist = [], [], []
            p = -g
            dphi0 = float(g @ p)
        step0 = 1.0 if s_hist or it > 1 else min(1.0, 1.0 / g_norm)
        ls = _strong_wolfe(fun, x, f, g, p, step0,
                           config.wolfe_c1, config.wolfe_c2)
        evals += ls.n_evals
        if not ls.ok:
            status = "line-search-failure"
            warnings.warn(
                f"line search failed at iteration {it}; returning the "
                "best iterate found",
                RuntimeWarning,
                stacklevel=2,
            )
            break

        x_new = x + ls.step * p
        # strong Wolfe conditions hold for every accepted step
        slack = 1e-10 * max(1.0, abs(f))
        assert ls.value <= f + config.wolfe_c1 * ls.step * dphi0 + slack
        assert abs(float(ls.gradient @ p)) <= (
            config.wolfe_c2 * abs(dphi0) + 1e-10 * max(1.0, abs(dphi0))
        )

        s = x_new - x
        y = ls.gradient - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > config.lbfgs_memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        x, f, g, aux = x_new, ls.value, ls.gradient, ls.aux
        g_norm = float(np.linalg.norm(g))
        trace.append(IterRecord(it, f, g_norm, ls.step, aux))
        if g_norm <= gtol:
            status = "converged"
            break

    return LbfgsResult(x, f, g, trace, status, evals, aux)


def _two_loop_direction(g, s_hist, y_hist, rho_hist):
    q = -g.copy()
    if not s_hist:
        return q
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist),
                         reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    y_last, s_last = y_hist[-1], s_hist[-1]
    q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist),
                              reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


@dataclass(eq=False)
class _LineSearchResult:
    ok: bool
    step: float = 0.0
    value: float = np.inf
    gradient: np.ndarray = None
    aux: dict = None
    n_evals: int = 0


def _strong_wolfe(fun, x, f0, g0, p, step0, c1, c2, max_evals=25):
    """Nocedal-Wright bracketing line search with zoom."""
    dphi0 = float(g0 @ p)
    if dphi0 >= 0:
        return _LineSearchResult(ok=False)

    evals = 0

    def phi(a):
        nonlocal evals
        f, g, aux = _call(fun, x + a * p)
        evals += 1
        return f, float(g @ p), g, aux

    def result(a, f, g, aux):
        return _LineSearchResult(ok=True, step=a, value=f, gradient=g,
                                 aux=aux, n_evals=evals)

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = step0
    a_max = 1e10
    for i in range(max_evals):
        f, d, g, aux = phi(a)
        if not np.isfinite(f):
            out = _zoom(phi, a_prev, f_prev, d_prev, a, f, d,
                        f0, dphi0, c1, c2, max_evals - evals)
            break
        if f > f0 + c1 * a * dphi0 or (f >= f_prev and i > 0):
            out = _zoom(phi, a_prev, f_prev, d_prev, a, f, d,
                        f0, dphi0, c1, c2, max_evals - evals)
            break
        if abs(d) <= -c2 * dphi0:
            return result(a, f, g, aux)
        if d >= 0:
            out = _zoom(phi, a, f, d, a_prev, f_prev, d_prev,
                        f0, dphi0, c1, c2, max_evals - evals)
            break
        a_prev, f_prev, d_prev = a, f, d
        a = min(2.0 * a, a_max)
    else:
        return _LineSearchResult(ok=False, n_evals=evals)

    if out is None:
        return _LineSearchResult(ok=False, n_evals=evals)
    a, f, g, aux = out
    return result(a, f, g, aux)


def _zoom(phi, a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, f0, dphi0, c1, c2,
          budget):
    for _ in range(max(budget, 1)):
        a = _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi)
        f, d, g, aux = phi(a)
        if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
            a_hi, f_hi, d_hi = a, f, d
        else:
            if abs(d) <= -c2 * dphi0:
                return a, f, g, aux
            if d * (a_hi - a_lo) >= 0:
                a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
            a_lo, f_lo, d_lo = a, f, d
        if abs(a_hi - a_lo) < 1e-14 * max(1.0, abs(a_lo)):
            break
    return None


def _interpolate(a_lo, f_lo, d_lo, a_hi, f_hi):
    # quadratic model through (a_lo, f_lo, d_lo) and (a_hi, f_hi),
    # safeguarded toward bisection
    span = a_hi - a_lo
    denom = 2.0 * (f_hi - f_lo - d_lo * span)
    if denom != 0 and np.isfinite(denom):
        a = a_lo - d_lo * span * span / denom
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        pad = 0.1 * abs(span)
        if np.isfinite(a) and lo + pad <= a <= hi - pad:
            return a
    return a_lo + 0.5 * span


# -- multi-stage registration -------------------------------------------


@dataclass(eq=False)
class StageResult:
    config: StageConfig
    control: np.ndarray
    velocity: object
    deformed: object
    trace: list
    status: str
    initial_value: float
    final_value: float
    final_l2: float


@dataclass(eq=False)
class RegistrationResult:
    """Per-stage velocities, deformed images, and iteration traces."""

    stages: list                 # StageResult
    initial_l2: float
    final_l2: float

    @property
    def velocities(self):
        return [s.velocity for s in self.stages]

    @property
    def deformed_images(self):
        return [s.deformed for s in self.stages]

    def trace_rows(self):
        """Flat (stage, iteration, value, grad_norm, step, l2, mismatch,
        regularizer) rows across stages."""
        rows = []
        for si, stage in enumerate(self.stages):
            for rec in stage.trace:
                rows.append((
                    si,
                    rec.iteration,
                    rec.value,
                    rec.grad_norm,
                    rec.step,
                    rec.aux.get("l2", np.nan),
                    rec.aux.get("mismatch", np.nan),
                    rec.aux.get("regularizer", np.nan),
                ))
        return rows


def register_multistage(source, target, stages):
    """Optimize a sequence of stationary velocity fields.

    Each stage minimizes from a zero control with the previous deformed
    image as initial condition, then advances the image with its
    optimized velocity.
    """
    if not stages:
        raise ValueError("need at least one stage")
    mesh = source.mesh
    if target.mesh is not mesh:
        raise ValueError("images live on different meshes")

    current = source
    results = []
    initial_l2 = l2_discrepancy(source, target)
    for idx, cfg in enumerate(stages):
        chain = ControlChain(mesh, SmootherConfig(
            alpha=cfg.alpha, beta=cfg.beta,
            cg_tol=cfg.cg_tol, cg_maxit=cfg.cg_maxit,
        ))
        delta = cfg.delta if cfg.delta is not None else default_delta(target)
        obj_cfg = ObjectiveConfig(delta=delta, gamma=cfg.gamma)
        problem = TransportProblem(mesh, None, T=cfg.T, N=cfg.N,
                                   epsilon=cfg.epsilon)
        moving = current

        def fun(x, _moving=moving, _chain=chain, _obj=obj_cfg,
                _problem=problem):
            rep = evaluate_objective_and_gradient(
                x, _moving, target, _problem, _obj, chain=_chain
            )
            return rep.objective, rep.gradient, {
                "l2": rep.l2_discrepancy,
                "mismatch": rep.mismatch,
                "regularizer": rep.regularizer,
            }

        x0 = np.zeros(chain.n_controls)
        try:
            res = lbfgs_minimize(fun, x0, cfg)
        except Exception as exc:
            raise type(exc)(f"stage {idx}: {exc}") from exc

        velocity = chain.control_to_velocity(res.x)
        solver = TransportSolver(problem.with_velocity(velocity))
        deformed_coeffs, _ = solver.solve(moving.coeffs, record=False)
        from .fields import DgScalarField

        deformed = DgScalarField(mesh, deformed_coeffs)
        results.append(StageResult(
            config=cfg,
            control=res.x,
            velocity=velocity,
            deformed=deformed,
            trace=res.trace,
            status=res.status,
            initial_value=res.trace[0].value,
            final_value=res.value,
            final_l2=l2_discrepancy(deformed, target),
        ))
        current = deformed

    return RegistrationResult(
        stages=results,
        initial_l2=initial_l2,
        final_l2=results[-1].final_l2,
    )
