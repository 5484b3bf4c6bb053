"""Augmented-Lagrangian solver with a projected spectral-gradient inner loop.

Solves ``min f(z)  s.t.  c(z) <= 0,  z in Z`` where ``Z`` is a set with a
cheap Euclidean projection. Inner iterations use Barzilai-Borwein steps with
a monotone Armijo backtrack on the augmented Lagrangian, so the merit value
never increases within one inner solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class SolverOptions:
    max_iter: int = 500  # inner iterations summed over all outer rounds
    gtol: float = 1e-4  # projected-gradient norm
    ctol: float = 1e-4  # max constraint violation
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    max_outer: int = 30
    armijo: float = 1e-4
    step_min: float = 1e-12
    step_max: float = 1e6
    inner_tol0: float = 1e-1  # first-round gradient tolerance, tightened 10x per round
    inner_share: float = 0.25  # fraction of max_iter one inner solve may use


@dataclass
class SolverResult:
    z: np.ndarray
    f: float
    violation: float
    grad_norm: float
    iterations: int
    outer_iterations: int
    converged: bool
    multipliers: np.ndarray
    merit_history: list = field(default_factory=list)


def _phr(c: np.ndarray, lam: np.ndarray, rho: float) -> tuple[float, np.ndarray]:
    # Powell-Hestenes-Rockafellar term for inequalities and its weight on grad c
    shifted = np.maximum(0.0, lam + rho * c)
    return float((shifted @ shifted - lam @ lam) / (2.0 * rho)), shifted


def minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    z0: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray] = lambda z: z,
    constraints: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
    options: SolverOptions | None = None,
) -> SolverResult:
    """Minimize ``objective`` over the projected set subject to ``constraints``.

    Parameters
    ----------
    objective : callable
        ``z -> (f, grad f)``.
    z0 : ndarray
        Starting point; projected before use.
    project : callable
        Euclidean projection onto the simple set.
    constraints : callable, optional
        ``z -> (c, J)`` with ``c`` the inequality values (feasible when
        ``<= 0``) and ``J`` their Jacobian, shape ``(len(c), len(z))``.
    options : SolverOptions, optional

    Returns
    -------
    SolverResult
        ``merit_history`` lists the accepted merit values per inner solve, one
        list per outer round.
    """
    opts = options or SolverOptions()
    z = project(np.asarray(z0, dtype=float).copy())

    if constraints is None:
        def constraints(_z):
            return np.zeros(0), np.zeros((0, _z.size))

    c, J = constraints(z)
    lam = np.zeros(c.size)
    rho = opts.rho0

    def merit(zz):
        f, g = objective(zz)
        cc, JJ = constraints(zz)
        if cc.size:
            pen, w = _phr(cc, lam, rho)
            return f + pen, g + JJ.T @ w, f, cc
        return f, g, f, cc

    iters = 0
    outer = 0
    history: list[list[float]] = []
    prev_viol = np.inf
    converged = False
    pg_norm = np.inf
    while True:
        outer += 1
        L, g, f, c = merit(z)
        rounds = [L]
        step = 1.0 / max(np.linalg.norm(g), 1e-12)
        # inexact inner solves: loose early, exact once the multipliers settle
        tol = opts.gtol if c.size == 0 else max(opts.gtol, opts.inner_tol0 * 0.1 ** (outer - 1))
        cap = opts.max_iter if c.size == 0 else iters + max(20, int(opts.inner_share * opts.max_iter))
        while iters < min(opts.max_iter, cap):
            pg = project(z - g) - z
            pg_norm = float(np.linalg.norm(pg))
            if pg_norm <= tol:
                break
            iters += 1
            alpha = min(max(step, opts.step_min), opts.step_max)
            while True:
                z_new = project(z - alpha * g)
                dz = z_new - z
                L_new, g_new, f_new, c_new = merit(z_new)
                if L_new <= L + opts.armijo * (g @ dz) or alpha <= opts.step_min:
                    break
                alpha *= 0.5
            if not L_new < L:
                # no strict decrease: stationary to working precision
                break
            s, y = dz, g_new - g
            sy = s @ y
            step = (s @ s) / sy if sy > 0 else opts.step_max
            z, L, g, f, c = z_new, L_new, g_new, f_new, c_new
            rounds.append(L)
        history.append(rounds)

        pg_norm = float(np.linalg.norm(project(z - g) - z))
        # feasibility and complementarity in one measure
        viol = float(np.max(np.abs(np.maximum(c, -lam / rho)), initial=0.0))
        if viol <= opts.ctol and pg_norm <= opts.gtol:
            converged = True
            break
        if iters >= opts.max_iter or c.size == 0 or outer >= opts.max_outer:
            break
        lam = np.maximum(0.0, lam + rho * c)
        if viol > 0.25 * prev_viol and rho < opts.rho_max:
            rho *= opts.rho_growth
        prev_viol = viol

    f, _ = objective(z)
    c, _ = constraints(z)
    viol = float(np.max(c, initial=0.0)) if c.size else 0.0
    return SolverResult(
        z=z,
        f=float(f),
        violation=viol,
        grad_norm=pg_norm,
        iterations=iters,
        outer_iterations=outer,
        converged=converged,
        multipliers=lam,
        merit_history=history,
    )
