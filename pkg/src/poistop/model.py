"""Problem-instance data model and reward/cost primitives.

A model bundles the hidden-chain generator Q, the state-modulated arrival
rates, the mark law of the observation process, running costs (or per-mark
information costs), terminal reward rows and the horizon.  All downstream
modules (filtering, value iteration, policies, simulation) consume the
validated, immutable ``ModelSpec``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats


class ModelError(ValueError):
    """Raised when a model fails validation; carries the violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid model: " + "; ".join(self.violations))


# ---------------------------------------------------------------------------
# mark models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkModel:
    """Mark law of the observation process, reduced to node/weight arrays.

    ``support`` holds the mark values (quadrature nodes for the gamma case,
    a single dummy mark for simple Poisson observations).  ``weights[i, r]``
    is the probability weight of mark r under state i -- i.e. f_i(y_r) times
    the reference-measure weight of y_r -- so each row sums to one.
    ``density[i, r]`` is proportional (in i, at fixed r) to the density
    f_i(y_r); only the cross-state ratio matters for Bayes updates.
    """

    kind: str                      # "none" | "discrete" | "gamma"
    support: np.ndarray            # (R,)
    weights: np.ndarray            # (n, R), rows sum to 1
    density: np.ndarray            # (n, R)
    gamma_shape: np.ndarray | None = None
    gamma_rate: np.ndarray | None = None

    @property
    def n_marks(self):
        return self.support.size

    def density_at(self, y):
        """Per-state density column for an observed mark value ``y``.

        For discrete marks ``y`` must be (close to) a support point; for the
        gamma case the exact per-state pdf is evaluated.  Only the ratio
        across states is meaningful.
        """
        if self.kind == "gamma":
            return np.array([
                stats.gamma.pdf(y, a, scale=1.0 / b)
                for a, b in zip(self.gamma_shape, self.gamma_rate)
            ])
        if self.kind == "none":
            return np.ones(self.weights.shape[0])
        r = int(np.argmin(np.abs(self.support - y)))
        if abs(self.support[r] - y) > 1e-9 * (1.0 + abs(y)):
            raise ValueError(f"mark {y!r} not in the model's support")
        return self.density[:, r].copy()


def no_marks(n):
    """Simple Poisson observations: a single dummy mark, f_i identically 1."""
    return MarkModel(
        kind="none",
        support=np.zeros(1),
        weights=np.ones((n, 1)),
        density=np.ones((n, 1)),
    )


def discrete_marks(support, pmf):
    """Finite mark alphabet with per-state pmf rows."""
    support = np.asarray(support, dtype=float)
    pmf = np.asarray(pmf, dtype=float)
    return MarkModel(kind="discrete", support=support, weights=pmf, density=pmf)


def gamma_marks(shape, rate, n_quad=40, q_hi=0.9999):
    """Per-state Gamma(shape_i, rate_i) marks via Gauss-Legendre quadrature.

    The quadrature lives on [0, y_max] where y_max is the q_hi quantile of
    the widest of the Gamma laws; each state's weight row is renormalized so
    it integrates to one exactly (the discarded tail mass is below
    1 - q_hi and would otherwise break the normalization invariant).
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    y_max = max(
        stats.gamma.ppf(q_hi, a, scale=1.0 / b) for a, b in zip(shape, rate)
    )
    x, w = np.polynomial.legendre.leggauss(n_quad)
    nodes = 0.5 * y_max * (x + 1.0)
    wts = 0.5 * y_max * w
    dens = np.stack([
        stats.gamma.pdf(nodes, a, scale=1.0 / b) for a, b in zip(shape, rate)
    ])
    weights = dens * wts
    row_sums = weights.sum(axis=1, keepdims=True)
    weights = weights / row_sums
    dens = dens / row_sums
    return MarkModel(
        kind="gamma",
        support=nodes,
        weights=weights,
        density=dens,
        gamma_shape=shape,
        gamma_rate=rate,
    )


# ---------------------------------------------------------------------------
# model spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    n: int
    Q: np.ndarray                  # (n, n) generator
    lam: np.ndarray                # (n,) arrival rates
    marks: MarkModel
    c: np.ndarray                  # (n,) running cost/reward rates
    rho: float                     # discount rate
    mu: np.ndarray                 # (a, n) terminal reward rows
    horizon: float                 # T
    cost_mode: str = "running"     # "running" | "discrete"
    K: np.ndarray | None = None    # (R,) per-mark cost, cost_mode="discrete"
    states: tuple = ()
    actions: tuple = ()
    sense: str = "max"             # "min" models are stored sign-flipped

    @property
    def lam_bar(self):
        return float(np.max(self.lam))

    @property
    def n_actions(self):
        return self.mu.shape[0]

    @property
    def Lambda(self):
        return np.diag(self.lam)

    def flow_generator(self):
        """Q - diag(lambda), the generator of the killed/no-arrival dynamics."""
        return self.Q - np.diag(self.lam)

    def nu_K(self):
        """Per-state expected mark cost (nu_i K), for discrete cost mode."""
        if self.K is None:
            raise ValueError("model has no mark-cost function K")
        return self.marks.weights @ np.asarray(self.K, dtype=float)

    def effective_cost_rates(self):
        """The c_i analogue entering the DP integrand and the error bounds.

        Running mode: c itself.  Discrete mode: lambda_i * (nu_i K), the
        expected information-cost rate while observing.
        """
        if self.cost_mode == "discrete":
            return self.lam * self.nu_K()
        return self.c

    def norm_C(self):
        return float(np.max(np.abs(self.effective_cost_rates())))

    def norm_H(self):
        # |H| over the simplex is bounded by its values at the corners; H is
        # a max of linear forms so the corner max is exact for H itself and
        # conservative for |H|.
        return float(np.max(np.abs(np.max(self.mu, axis=0))))


def make_model(n, Q, lam, marks=None, c=None, rho=0.0, mu=None, horizon=1.0,
               cost_mode="running", K=None, states=(), actions=(),
               sense="max"):
    """Assemble and validate a ModelSpec from array-likes."""
    Q = np.asarray(Q, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if marks is None:
        marks = no_marks(n)
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        mu = mu[None, :]
    spec = ModelSpec(
        n=n, Q=Q, lam=lam, marks=marks, c=c, rho=float(rho), mu=mu,
        horizon=float(horizon), cost_mode=cost_mode,
        K=None if K is None else np.asarray(K, dtype=float),
        states=tuple(states), actions=tuple(actions), sense=sense,
    )
    return validate_model(spec)


def model_violations(spec):
    """All violated structural invariants, as human-readable strings."""
    out = []
    n = spec.n
    if n < 1:
        out.append(f"n: state count must be >= 1, got {n}")
        return out
    if spec.Q.shape != (n, n):
        out.append(f"Q: expected shape {(n, n)}, got {spec.Q.shape}")
        return out
    offdiag = spec.Q - np.diag(np.diag(spec.Q))
    if np.any(offdiag < -1e-12):
        i, j = np.unravel_index(np.argmin(offdiag), offdiag.shape)
        out.append(f"Q[{i},{j}]: off-diagonal generator entry must be >= 0, "
                   f"got {spec.Q[i, j]}")
    row_sums = spec.Q.sum(axis=1)
    if np.any(np.abs(row_sums) > 1e-12):
        i = int(np.argmax(np.abs(row_sums)))
        out.append(f"Q row {i}: generator row sum != 0 (got {row_sums[i]})")
    if spec.lam.shape != (n,):
        out.append(f"lambda: expected {n} rates, got shape {spec.lam.shape}")
    else:
        if np.any(spec.lam < 0):
            out.append(f"lambda: all rates must be >= 0, got {spec.lam}")
        if np.max(spec.lam) <= 0:
            out.append("lambda: max lambda_i > 0 required (no observations "
                       "possible otherwise)")
    if spec.c.shape != (n,):
        out.append(f"c: expected {n} rates, got shape {spec.c.shape}")
    if spec.rho < 0:
        out.append(f"rho: discount rate must be >= 0, got {spec.rho}")
    if spec.mu.ndim != 2 or spec.mu.shape[0] < 1 or spec.mu.shape[1] != n:
        out.append(f"mu: expected at least one action row of width {n}, "
                   f"got shape {spec.mu.shape}")
    elif not np.all(np.isfinite(spec.mu)):
        out.append("mu: all terminal rewards must be finite")
    if spec.horizon < 0:
        out.append(f"horizon: T must be >= 0, got {spec.horizon}")
    if spec.cost_mode not in ("running", "discrete"):
        out.append(f"cost_mode: unknown mode {spec.cost_mode!r}")
    if spec.cost_mode == "discrete":
        if spec.K is None:
            out.append("K: cost_mode='discrete' requires mark costs K")
        elif spec.K.shape != (spec.marks.n_marks,):
            out.append(f"K: expected one value per mark "
                       f"({spec.marks.n_marks}), got shape {spec.K.shape}")
        elif not np.all(np.isfinite(spec.K)):
            out.append("K: mark costs must be finite")
    m = spec.marks
    if m.weights.shape[0] != n:
        out.append(f"marks: expected {n} weight rows, got "
                   f"{m.weights.shape[0]}")
    else:
        if np.any(m.weights < -1e-15):
            out.append("marks: negative probability weight")
        sums = m.weights.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-8):
            i = int(np.argmax(np.abs(sums - 1.0)))
            out.append(f"marks: state {i} weights sum to {sums[i]}, not 1 "
                       f"(within 1e-8)")
    return out


def validate_model(spec):
    """Return a normalized model or raise ModelError listing every violation.

    Normalization forces generator row sums to exactly zero (by absorbing
    the residual into the diagonal) and freezes all arrays.
    """
    bad = model_violations(spec)
    if bad:
        raise ModelError(bad)
    Q = spec.Q.copy()
    np.fill_diagonal(Q, 0.0)
    Q[Q < 0] = 0.0
    np.fill_diagonal(Q, -Q.sum(axis=1))
    for a in (Q, spec.lam, spec.c, spec.mu):
        a.setflags(write=False)
    return replace(spec, Q=Q)


# ---------------------------------------------------------------------------
# beliefs and reward primitives
# ---------------------------------------------------------------------------

def check_belief(pi, n=None, tol=1e-9):
    """Validate and return a belief vector (clipped to the simplex)."""
    pi = np.asarray(pi, dtype=float)
    if n is not None and pi.shape != (n,):
        raise ValueError(f"belief: expected {n} components, got {pi.shape}")
    if np.any(pi < -tol) or abs(pi.sum() - 1.0) > max(tol, 1e-9):
        raise ValueError(f"belief outside the simplex: {pi}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def action_values(model, pi):
    """H_k(pi) for every action row k."""
    return model.mu @ np.asarray(pi, dtype=float)


def terminal_reward(model, pi):
    """(H(pi), best action) with smallest-index tie-break.

    H(pi) = max_k sum_i mu[k, i] pi_i.
    """
    vals = action_values(model, pi)
    best = int(np.argmax(vals))  # argmax returns the first (smallest) index
    return float(vals[best]), best


def terminal_reward_nodes(model, nodes):
    """Vectorized H over an array of beliefs (N, n) -> (N,)."""
    return np.max(nodes @ model.mu.T, axis=-1)


def best_action_nodes(model, nodes):
    return np.argmax(nodes @ model.mu.T, axis=-1)


def running_cost(model, pi):
    """C(pi) = sum_i c_i pi_i (running cost mode only)."""
    if model.cost_mode != "running":
        raise ValueError("running_cost undefined: model uses discrete "
                         "information costs")
    return float(np.dot(model.c, pi))


def net_return_rate(model, i, k):
    """Instantaneous net return of waiting at corner i against action k:

        c_i - rho * mu[k, i] + sum_{j != i} (mu[k, j] - mu[k, i]) * q_{i, j}

    For discrete cost mode, lambda_i * (nu_i K) plays the role of c_i.
    """
    c = model.effective_cost_rates()
    drift = sum(
        (model.mu[k, j] - model.mu[k, i]) * model.Q[i, j]
        for j in range(model.n) if j != i
    )
    return float(c[i] - model.rho * model.mu[k, i] + drift)


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

def model_to_dict(model):
    d = {
        "n": model.n,
        "Q": model.Q.tolist(),
        "lambda": model.lam.tolist(),
        "c": model.c.tolist(),
        "rho": model.rho,
        "mu": model.mu.tolist(),
        "horizon": model.horizon,
        "cost_mode": model.cost_mode,
        "sense": model.sense,
    }
    m = model.marks
    if m.kind == "none":
        d["marks"] = {"kind": "none"}
    elif m.kind == "discrete":
        d["marks"] = {
            "kind": "discrete",
            "support": m.support.tolist(),
            "pmf": m.weights.tolist(),
        }
    else:
        d["marks"] = {
            "kind": "gamma",
            "shape": m.gamma_shape.tolist(),
            "rate": m.gamma_rate.tolist(),
            "n_quad": int(m.support.size),
        }
    if model.K is not None:
        d["K"] = np.asarray(model.K).tolist()
    if model.states:
        d["states"] = list(model.states)
    if model.actions:
        d["actions"] = list(model.actions)
    return d


def model_from_dict(d):
    n = int(d["n"])
    md = d.get("marks", {"kind": "none"})
    kind = md.get("kind", "none")
    if kind == "none":
        marks = no_marks(n)
    elif kind == "discrete":
        marks = discrete_marks(md["support"], md["pmf"])
    elif kind == "gamma":
        marks = gamma_marks(md["shape"], md["rate"],
                            n_quad=int(md.get("n_quad", 40)))
    else:
        raise ModelError([f"marks.kind: unknown kind {kind!r}"])
    return make_model(
        n=n,
        Q=d["Q"],
        lam=d["lambda"],
        marks=marks,
        c=d.get("c"),
        rho=d.get("rho", 0.0),
        mu=d["mu"],
        horizon=d.get("horizon", 1.0),
        cost_mode=d.get("cost_mode", "running"),
        K=d.get("K"),
        states=d.get("states", ()),
        actions=d.get("actions", ()),
        sense=d.get("sense", "max"),
    )


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")
