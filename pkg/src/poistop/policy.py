"""Decisions from value surfaces: regions, epsilon-optimal rules, diagnostics.

The stop set at time-to-maturity s is {pi : V(s, pi) = H(pi)}, detected on
the grid as V - H <= eps_tol; stopping selects the best terminal action
(smallest index on ties).  The deterministic first-crossing time follows the
no-arrival flow until it enters the eps-stop set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .model import (action_values, best_action_nodes, check_belief,
                    net_return_rate, terminal_reward, terminal_reward_nodes)
from .valueiter import apply_J0

CONTINUE = -1


@dataclass
class StoppingRegion:
    surface: object
    eps_tol: float
    labels: np.ndarray           # (L+1, N); -1 = continue, else action index

    def stop_mask(self, k=None):
        lab = self.labels if k is None else self.labels[k]
        return lab != CONTINUE

    def action_nodes(self, k, action):
        """Node indices labeled with the given action at knot k."""
        return np.nonzero(self.labels[k] == action)[0]

    def hulls(self, k):
        """Per-action convex hull vertices (belief coordinates) at knot k."""
        from scipy.spatial import ConvexHull, QhullError
        grid = self.surface.grid
        out = {}
        for a in range(self.surface.model.n_actions):
            pts = grid.nodes[self.labels[k] == a]
            if len(pts) == 0:
                out[a] = np.zeros((0, grid.n))
                continue
            proj = pts[:, : grid.n - 1]
            try:
                hull = ConvexHull(proj)
                out[a] = pts[hull.vertices]
            except (QhullError, IndexError, ValueError):
                out[a] = pts
        return out

    def to_csv(self, path):
        grid = self.surface.grid
        cols = ",".join(f"pi{i + 1}" for i in range(grid.n))
        with open(path, "w") as fh:
            fh.write(f"s,{cols},label\n")
            for k, s in enumerate(self.surface.knots):
                for node, lab in zip(grid.nodes, self.labels[k]):
                    coords = ",".join(f"{p:.17g}" for p in node)
                    fh.write(f"{s:.17g},{coords},{int(lab)}\n")


def extract_regions(surface, eps_tol=None):
    """Label every (knot, node) as continue or stop-with-best-action."""
    if eps_tol is None:
        eps_tol = 10.0 * surface.meta.get("tol", 1e-4)
    model = surface.model
    H = terminal_reward_nodes(model, surface.grid.nodes)
    best = best_action_nodes(model, surface.grid.nodes)
    stop = surface.values - H[None, :] <= eps_tol
    labels = np.where(stop, best[None, :], CONTINUE).astype(np.int64)
    return StoppingRegion(surface=surface, eps_tol=float(eps_tol),
                          labels=labels)


# ---------------------------------------------------------------------------
# two-state boundary curves
# ---------------------------------------------------------------------------

def continuation_interval(model, grid, values, eps_tol, n_bisect=60):
    """[lower, upper] of the continuation set in the pi_2 coordinate (n=2).

    ``values`` is a nodal value slice.  The interval endpoints are refined
    by bisection of V - H - eps_tol between the bracketing grid nodes.
    Returns (nan, nan) when no node continues.
    """
    if model.n != 2:
        raise ValueError("continuation_interval is defined for n = 2 only")
    p2 = grid.nodes[:, 1]
    order = np.argsort(p2)
    H = terminal_reward_nodes(model, grid.nodes)
    gap = values - H
    cont = gap[order] > eps_tol
    if not cont.any():
        return float("nan"), float("nan")
    p2s = p2[order]

    def g(q2):
        pi = np.array([1.0 - q2, q2])
        return (grid.interpolate(values, pi)
                - terminal_reward(model, pi)[0] - eps_tol)

    def refine(a, b):
        # g(a) <= 0 < g(b) or vice versa; bisect the sign change
        fa = g(a)
        for _ in range(n_bisect):
            mid = 0.5 * (a + b)
            if (g(mid) <= 0.0) == (fa <= 0.0):
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    first = int(np.argmax(cont))
    last = len(cont) - 1 - int(np.argmax(cont[::-1]))
    lower = p2s[first]
    if first > 0:
        lower = refine(p2s[first - 1], p2s[first])
    upper = p2s[last]
    if last < len(cont) - 1:
        upper = refine(p2s[last + 1], p2s[last])
    return float(lower), float(upper)


def boundary_curve(surface, eps_tol=None):
    """Per-knot continuation interval in pi_2 for two-state models.

    Returns an (L+1, 3) array of rows (s, lower, upper).
    """
    if eps_tol is None:
        eps_tol = 10.0 * surface.meta.get("tol", 1e-4)
    rows = []
    for k, s in enumerate(surface.knots):
        lo, hi = continuation_interval(surface.model, surface.grid,
                                       surface.values[k], eps_tol)
        rows.append((float(s), lo, hi))
    return np.array(rows)


def boundary_curve_to_csv(curve, path):
    with open(path, "w") as fh:
        fh.write("s,lower,upper\n")
        for s, lo, hi in curve:
            fh.write(f"{s:.17g},{lo:.17g},{hi:.17g}\n")


# ---------------------------------------------------------------------------
# recommendations and stopping rules
# ---------------------------------------------------------------------------

@dataclass
class Recommendation:
    decision: str                # "continue" | "stop"
    action: int | None
    value: float
    reward: float
    gap: float
    wait: float | None = None    # maximizing deterministic wait (if computed)


def recommend(model, surface, s_remaining, pi, eps, compute_wait=False):
    """Stop iff V(s_remaining, pi) - eps <= H(pi)."""
    pi = check_belief(pi, model.n)
    v = surface.value_at(s_remaining, pi)
    h, best = terminal_reward(model, pi)
    gap = v - h
    if gap <= eps:
        return Recommendation("stop", best, v, h, gap, wait=0.0)
    wait = None
    if compute_wait:
        _, wait = apply_J0(model, surface, s_remaining, pi)
    return Recommendation("continue", None, v, h, gap, wait=wait)


def deterministic_stop_time(model, surface, s, pi, eps):
    """First grid time at which the no-arrival flow enters the eps-stop set;
    s if it never does before the deadline."""
    pi = check_belief(pi, model.n)
    dt = surface.dt if surface.L else s
    times = [t for t in surface.knots if t <= s + 1e-12]
    if not times or abs(times[-1] - s) > 1e-12:
        times.append(float(s))
    P = expm(dt * model.flow_generator()) if dt else None
    x = pi
    prev_t = 0.0
    for t in times:
        if t > prev_t:
            step = t - prev_t
            if abs(step - dt) < 1e-12:
                m = np.clip(x @ P, 0.0, None)
            else:
                m = np.clip(x @ expm(step * model.flow_generator()), 0.0,
                            None)
            x = m / m.sum()
            prev_t = t
        v = surface.value_at(s - t, x)
        h, _ = terminal_reward(model, x)
        if v - eps <= h:
            return float(t)
    return float(s)


# ---------------------------------------------------------------------------
# structural diagnostics
# ---------------------------------------------------------------------------

def ila_boundary(model):
    """Infinitesimal look-ahead coefficients r_i = c_i + sum_{j != i}
    (mu_j - mu_i) q_{i,j} for single-action models; the rule stops when
    sum_i r_i Pi_i < 0."""
    if model.n_actions != 1:
        raise ValueError("ila_boundary: defined for single-action models "
                         f"only (model has {model.n_actions} actions)")
    mu = model.mu[0]
    c = model.effective_cost_rates()
    r = np.array([
        c[i] + sum((mu[j] - mu[i]) * model.Q[i, j]
                   for j in range(model.n) if j != i)
        for i in range(model.n)
    ])
    return r


def corner_diagnostics(model):
    """Per-corner structural report.

    For each state i: the optimal action set at the corner, whether every
    such action has a positive net return rate (then the corner belongs to
    the continuation region for every s > 0), and -- for corners attaining
    the best terminal reward -- whether a horizon-free stop neighborhood
    exists (rho > 0 or negative effective cost rate).
    """
    c_eff = model.effective_cost_rates()
    mu_best = float(np.max(model.mu))
    report = {}
    for i in range(model.n):
        vals = model.mu[:, i]
        top = float(np.max(vals))
        astar = [int(k) for k in range(model.n_actions)
                 if vals[k] >= top - 1e-12]
        rates = {k: net_return_rate(model, i, k) for k in astar}
        in_istar = top >= mu_best - 1e-12
        report[i] = {
            "optimal_actions": astar,
            "net_return_rates": rates,
            "continuation_corner": all(r > 0 for r in rates.values()),
            "in_I_star": bool(in_istar),
            "stop_neighborhood": bool(
                in_istar and (model.rho > 0 or c_eff[i] < 0)
            ),
        }
    return report


def two_hypothesis_diagnostics(model):
    """Closed-form facts for the two-state, zero-generator, simple-Poisson
    Bayes-risk model with misclassification penalties mu_12, mu_21:

    - trivial (stop everywhere immediately) iff
        mu21 mu12 (lam2 - lam1) <= mu21 + mu12;
    - the boundary b_1 near maturity sits at the flat level
        (1 + mu21 lam1) / (mu21 lam1 + mu12 lam2);
    - at zero time-to-maturity the boundary is mu21 / (mu21 + mu12).
    """
    bad = []
    if model.n != 2:
        bad.append(f"need n=2, got {model.n}")
    elif np.max(np.abs(model.Q)) > 1e-12:
        bad.append("need an absorbing chain (Q = 0)")
    if model.marks.kind != "none":
        bad.append("need simple Poisson observations (no marks)")
    if model.mu.shape != (2, 2) or np.max(np.abs(np.diag(model.mu))) > 1e-12 \
            or np.any(model.mu - np.diag(np.diag(model.mu)) > 1e-12):
        bad.append("need a sign-flipped penalty matrix "
                   "[[0, -mu12], [-mu21, 0]]")
    if bad:
        raise ValueError("two_hypothesis_diagnostics: " + "; ".join(bad))
    mu12 = -float(model.mu[0, 1])
    mu21 = -float(model.mu[1, 0])
    lam1, lam2 = float(model.lam[0]), float(model.lam[1])
    return {
        "trivial": mu21 * mu12 * (lam2 - lam1) <= mu21 + mu12,
        "flat_level": (1.0 + mu21 * lam1) / (mu21 * lam1 + mu12 * lam2),
        "t0_boundary": mu21 / (mu21 + mu12),
    }
