"""Damped semismooth Newton solver for mixed nonlinear complementarity problems.

Problems have the form

    g(u, v) = 0,      0 <= v  perp  f(u, v) >= 0

with ``u`` the free unknowns and ``v`` the complementarity unknowns. Each
complementarity pair is reformulated with a smoothed Fischer-Burmeister
function; the smoothing parameter is driven to zero over the iteration
(homotopy) so the accepted iterate satisfies the exact conditions.

Problems supply a residual evaluator for (g, f) and optionally its Jacobian;
without one, a central finite-difference Jacobian is assembled from batched
residual calls. Residuals and unknowns may carry per-component scales so that
problems posed in wildly different physical units (micronewton-second
impulses next to millimetre gaps) are solved in well-conditioned form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-7  # central-difference step per scaled unknown

# Fischer-Burmeister derivative at the kink (0, 0): subgradient along (1, 1)
_FB_KINK = 1.0 - 1.0 / np.sqrt(2.0)


class SingularJacobian(RuntimeError):
    """Jacobian was numerically singular beyond what least squares can absorb."""


class NonConvergence(RuntimeError):
    """Iteration stopped before reaching tolerance; carries the best iterate."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def fb_merit(a, b, eps=0.0):
    """Smoothed Fischer-Burmeister function a + b - sqrt(a^2 + b^2 + eps).

    With eps = 0 the value is zero exactly when a >= 0, b >= 0 and a*b = 0,
    so the roots of this function are the complementarity solutions.
    Broadcasts over array arguments.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + b - np.sqrt(a * a + b * b + eps)


def check_complementarity(v, f_values, tol):
    """True iff v >= -tol, f >= -tol and |v_i * f_i| <= tol componentwise."""
    v = np.asarray(v, dtype=float)
    f_values = np.asarray(f_values, dtype=float)
    if v.shape != f_values.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {f_values.shape}")
    if v.size == 0:
        return True
    return bool(
        (v >= -tol).all()
        and (f_values >= -tol).all()
        and (np.abs(v * f_values) <= tol).all()
    )


@dataclass(frozen=True)
class MncpProblem:
    """A mixed complementarity problem g(u,v) = 0, 0 <= v perp f(u,v) >= 0.

    residual_fn maps (u, v) -> (g, f) and must broadcast over a leading batch
    axis (inputs (..., dim_u), (..., dim_v)). jacobian_fn, when given, returns
    the (dim_u + dim_v) x (dim_u + dim_v) derivative of the stacked raw
    residual [g; f] with respect to [u; v] at a single point.

    residual_scale_u / residual_scale_v nondimensionalize the g rows and the
    f values; variable_scale nondimensionalizes the unknown vector [u; v].
    """

    dim_u: int
    dim_v: int
    residual_fn: Callable
    jacobian_fn: Optional[Callable] = None
    residual_scale_u: Optional[np.ndarray] = None
    residual_scale_v: Optional[np.ndarray] = None
    variable_scale: Optional[np.ndarray] = None

    @property
    def dim(self):
        return self.dim_u + self.dim_v

    def scales(self):
        s_u = (
            np.ones(self.dim_u)
            if self.residual_scale_u is None
            else np.asarray(self.residual_scale_u, dtype=float)
        )
        s_v = (
            np.ones(self.dim_v)
            if self.residual_scale_v is None
            else np.asarray(self.residual_scale_v, dtype=float)
        )
        s_x = (
            np.ones(self.dim)
            if self.variable_scale is None
            else np.asarray(self.variable_scale, dtype=float)
        )
        if s_u.shape != (self.dim_u,) or s_v.shape != (self.dim_v,):
            raise ValueError("residual scale lengths must match dim_u / dim_v")
        if s_x.shape != (self.dim,):
            raise ValueError("variable scale length must be dim_u + dim_v")
        return s_u, s_v, s_x


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 80
    residual_tolerance: float = 1e-10
    fb_smoothing: float = 1e-9
    line_search_shrink: float = 0.5
    min_step: float = 1e-7

    def __post_init__(self):
        if self.residual_tolerance <= 0.0:
            raise ValueError("residual_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.line_search_shrink < 1.0:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        if self.min_step <= 0.0:
            raise ValueError("min_step must be positive")
        if self.fb_smoothing < 0.0:
            raise ValueError("fb_smoothing must be nonnegative")


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    final_residual_norm: float
    solution: np.ndarray
    residual_history: list = field(default_factory=list)


def _raw_scaled(problem, x_scaled, s_u, s_v, s_x):
    """Evaluate (g, f) at scaled unknowns, returning scaled (g, f)."""
    z = x_scaled * s_x
    g, f = problem.residual_fn(z[..., : problem.dim_u], z[..., problem.dim_u :])
    g = np.asarray(g, dtype=float)
    f = np.asarray(f, dtype=float)
    return g / s_u, f / s_v


def _fd_jacobian(problem, x_scaled, s_u, s_v, s_x):
    """Central-difference Jacobian of the scaled (g, f) map, one batched call."""
    n = problem.dim
    steps = FD_STEP * np.maximum(1.0, np.abs(x_scaled))
    pts = np.repeat(x_scaled[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    pts[idx, idx] += steps
    pts[n + idx, idx] -= steps
    g, f = _raw_scaled(problem, pts, s_u, s_v, s_x)
    r = np.concatenate([g, f], axis=-1)
    jac = (r[:n] - r[n:]) / (2.0 * steps[:, None])
    return jac.T  # rows: residual components, cols: unknowns


def _analytic_jacobian(problem, x_scaled, s_u, s_v, s_x):
    z = x_scaled * s_x
    jac = np.asarray(
        problem.jacobian_fn(z[: problem.dim_u], z[problem.dim_u :]), dtype=float
    )
    if jac.shape != (problem.dim, problem.dim):
        raise ValueError("jacobian_fn returned wrong shape")
    s_r = np.concatenate([s_u, s_v])
    return jac * s_x[None, :] / s_r[:, None]


def _fb_residual(gs, fs, vs, eps):
    return np.concatenate([gs, fb_merit(vs, fs, eps)], axis=-1)


def _fb_chain(jac_scaled, fs, vs, eps, dim_u):
    """Compose the raw scaled Jacobian with the Fischer-Burmeister rows."""
    dim = jac_scaled.shape[0]
    dim_v = dim - dim_u
    out = jac_scaled.copy()
    if dim_v == 0:
        return out
    root = np.sqrt(vs * vs + fs * fs + eps)
    on_kink = root < 1e-300
    safe = np.where(on_kink, 1.0, root)
    da = np.where(on_kink, _FB_KINK, 1.0 - vs / safe)
    db = np.where(on_kink, _FB_KINK, 1.0 - fs / safe)
    out[dim_u:] = db[:, None] * jac_scaled[dim_u:]
    out[dim_u:, dim_u:] += np.diag(da)
    return out


def _composite_norm(gs, fs, vs):
    """Max of equality violation and exact complementarity violation."""
    worst = float(np.max(np.abs(gs))) if gs.size else 0.0
    if vs.size:
        worst = max(
            worst,
            float(np.max(-vs)),
            float(np.max(-fs)),
            float(np.max(np.abs(vs * fs))),
        )
    return worst


def solve(problem, initial_guess, config=SolverConfig()):
    """Solve the mixed complementarity problem from the given starting point.

    Returns a SolverReport on success. Raises NonConvergence (carrying the
    best iterate and residual history) if the iteration stalls or runs out of
    iterations, and SingularJacobian if even the least-squares fallback
    produces no usable direction.
    """
    s_u, s_v, s_x = problem.scales()
    x = np.asarray(initial_guess, dtype=float) / s_x
    if x.shape != (problem.dim,):
        raise ValueError(
            f"initial guess has length {x.shape}, expected {problem.dim}"
        )

    tol = config.residual_tolerance
    history = []
    best_x = x.copy()
    best_norm = np.inf

    def make_report(converged, iterations, norm, x_final):
        return SolverReport(
            converged=converged,
            iterations=iterations,
            final_residual_norm=norm,
            solution=x_final * s_x,
            residual_history=list(history),
        )

    n_cand = 1 + int(
        np.floor(np.log(config.min_step) / np.log(config.line_search_shrink))
    )
    ts_all = config.line_search_shrink ** np.arange(max(n_cand, 1))

    gs, fs = _raw_scaled(problem, x, s_u, s_v, s_x)
    rescue_eps = 0.0
    rescues_left = 6
    for iteration in range(config.max_iterations + 1):
        vs = x[problem.dim_u :]
        norm = _composite_norm(gs, fs, vs)
        history.append(norm)
        if not np.isfinite(norm):
            raise NonConvergence(
                "residual became non-finite",
                make_report(False, iteration, best_norm, best_x),
            )
        if norm < best_norm:
            best_norm = norm
            best_x = x.copy()
        if norm <= tol:
            return make_report(True, iteration, norm, x)
        if iteration == config.max_iterations:
            break

        # homotopy: keep the smoothing an order of magnitude below the
        # current error so it regularizes the kinks without retarding the
        # Newton rate; it vanishes as the residual does. A stall (below)
        # temporarily inflates it to melt through locked branch kinks.
        eps = min(config.fb_smoothing, 1e-2 * norm * norm)
        if rescue_eps > eps:
            eps = rescue_eps
        rescue_eps *= 0.2
        if eps < 1e-30:
            eps = 0.0

        if problem.jacobian_fn is not None:
            jac_raw = _analytic_jacobian(problem, x, s_u, s_v, s_x)
        else:
            jac_raw = _fd_jacobian(problem, x, s_u, s_v, s_x)
        jac = _fb_chain(jac_raw, fs, vs, eps, problem.dim_u)
        phi = _fb_residual(gs, fs, vs, eps)
        merit = 0.5 * float(phi @ phi)

        try:
            delta = np.linalg.solve(jac, -phi)
            if not np.all(np.isfinite(delta)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            # degenerate configuration (free slip multiplier, tied closest
            # points): minimal-norm step leaves the indeterminate directions
            # untouched and keeps the iteration deterministic
            delta, *_ = np.linalg.lstsq(jac, -phi, rcond=None)
            if not np.all(np.isfinite(delta)):
                raise SingularJacobian(
                    "no usable Newton direction at iteration "
                    f"{iteration} (residual {norm:.3e})"
                )

        # backtracking on the FB merit; candidates evaluated lazily in small
        # batches since the full step is almost always accepted
        accepted = None
        fallback = None
        for lo in range(0, len(ts_all), 4):
            ts = ts_all[lo : lo + 4]
            cand = x[None, :] + ts[:, None] * delta[None, :]
            g_c, f_c = _raw_scaled(problem, cand, s_u, s_v, s_x)
            phi_c = _fb_residual(g_c, f_c, cand[:, problem.dim_u :], eps)
            merits = 0.5 * np.einsum("ij,ij->i", phi_c, phi_c)
            merits = np.where(np.isfinite(merits), merits, np.inf)
            armijo = merits <= (1.0 - 2e-4 * ts) * merit
            if armijo.any():
                pick = int(np.argmax(armijo))
                accepted = (cand[pick], g_c[pick], f_c[pick])
                break
            pick = int(np.argmin(merits))
            if fallback is None or merits[pick] < fallback[0]:
                fallback = (merits[pick], cand[pick], g_c[pick], f_c[pick])
        if accepted is None and fallback is not None and fallback[0] < merit:
            accepted = fallback[1:]
        if accepted is None:
            # rescue: damped least-squares directions handle corners where
            # the semismooth Newton model is useless (simultaneous kinks at
            # an impact); deterministic, increasing damping
            jtj = jac.T @ jac
            jtp = jac.T @ phi
            lam = 1e-8 * max(float(np.trace(jtj)) / jac.shape[0], 1e-30)
            for _ in range(10):
                try:
                    direction = np.linalg.solve(
                        jtj + lam * np.eye(jac.shape[0]), -jtp
                    )
                except np.linalg.LinAlgError:
                    lam *= 30.0
                    continue
                cand = x[None, :] + np.array([[1.0], [0.25]]) * direction[None, :]
                g_c, f_c = _raw_scaled(problem, cand, s_u, s_v, s_x)
                phi_c = _fb_residual(g_c, f_c, cand[:, problem.dim_u :], eps)
                merits = 0.5 * np.einsum("ij,ij->i", phi_c, phi_c)
                merits = np.where(np.isfinite(merits), merits, np.inf)
                pick = int(np.argmin(merits))
                if merits[pick] < merit:
                    accepted = (cand[pick], g_c[pick], f_c[pick])
                    break
                lam *= 30.0
        if accepted is None:
            if rescues_left > 0:
                # stalled against a complementarity kink: restart the next
                # iterations on a heavily smoothed system and let the
                # smoothing decay again
                rescues_left -= 1
                rescue_eps = max(10.0 * norm * norm, 1e3 * config.fb_smoothing)
                continue
            raise NonConvergence(
                f"line search stalled at iteration {iteration} "
                f"(residual {norm:.3e})",
                make_report(False, iteration, best_norm, best_x),
            )
        x, gs, fs = accepted

    raise NonConvergence(
        f"no convergence in {config.max_iterations} iterations "
        f"(best residual {best_norm:.3e})",
        make_report(False, config.max_iterations, best_norm, best_x),
    )
