"""The worked case studies, transcribed as ready-to-solve presets.

Minimization problems (Bayes risk) are stored sign-flipped so the engine
always maximizes; ``sense = "min"`` marks them and the CLI negates reported
values back.
"""

from __future__ import annotations

import numpy as np

from .model import discrete_marks, gamma_marks, make_model


def _insurance():
    model = make_model(
        n=3,
        Q=[[-4.0, 3.0, 1.0], [2.0, -4.0, 2.0], [0.0, 3.0, -3.0]],
        lam=[1.0, 2.0, 5.0],
        marks=gamma_marks([3.0, 4.0, 5.0], [2.0, 2.0, 2.0], n_quad=24),
        c=[-0.3, -0.3, -0.3],
        rho=0.1,
        mu=[[6.0, 1.0, -3.0], [0.0, 0.0, 0.0]],
        horizon=0.8,
        states=("B", "G", "R"),
        actions=("launch", "quit"),
    )
    return model, {
        "description": "product-launch timing under a hidden market regime "
                       "with Gamma-distributed claim marks",
        "R": 100,
        "initial": np.full(3, 1.0 / 3.0),
    }


def _regime():
    model = make_model(
        n=2,
        Q=[[0.0, 0.0], [0.0, 0.0]],
        lam=[1.0, 5.0],
        c=[-1.0, -1.0],
        rho=0.0,
        mu=[[0.0, -2.0], [-2.0, 0.0]],
        horizon=2.0,
        states=("slow", "fast"),
        actions=("declare-slow", "declare-fast"),
        sense="min",
    )
    return model, {
        "description": "sequential two-hypothesis testing of a Poisson "
                       "arrival rate (Bayes risk: delay plus "
                       "misclassification penalties, sign-flipped)",
        "R": 200,
        "initial": np.array([0.5, 0.5]),
    }


def _reliability():
    model = make_model(
        n=3,
        Q=[[-4.0, 1.5, 2.5], [0.0, -1.5, 1.5], [0.0, 0.0, 0.0]],
        lam=[2.0, 3.0, 4.0],
        c=[1.0, 0.0, -1.0],
        rho=0.0,
        mu=[[-1.0, -1.0, 0.0]],
        horizon=1.5,
        states=("good", "worn", "failed"),
        actions=("overhaul",),
    )
    return model, {
        "description": "machine-replacement timing with deteriorating "
                       "hidden condition; single action, comparable with "
                       "the infinitesimal look-ahead rule",
        "R": 100,
        "initial": np.array([1.0, 0.0, 0.0]),
    }


def _reliability2():
    model = make_model(
        n=3,
        Q=[[-1.0, 0.5, 0.5], [0.0, -0.5, 0.5], [0.0, 0.0, 0.0]],
        lam=[1.0, 4.0, 7.0],
        c=[1.0, 0.0, -1.0],
        rho=0.0,
        mu=[[-1.0, -1.0, 0.0]],
        horizon=1.5,
        states=("good", "worn", "failed"),
        actions=("overhaul",),
    )
    return model, {
        "description": "second machine-replacement variant where the "
                       "look-ahead boundary is not a stopping barrier",
        "R": 100,
        "initial": np.array([1.0, 0.0, 0.0]),
        "witness_point": np.array([0.45, 0.45, 0.1]),
    }


def _techadopt():
    model = make_model(
        n=3,
        Q=[[-2.0, 2.0, 0.0], [0.0, -2.0, 2.0], [0.0, 0.0, 0.0]],
        lam=[3.0, 5.0, 3.0],
        marks=discrete_marks(
            [1.0, 2.0],
            [[0.2, 0.8], [0.5, 0.5], [0.8, 0.2]],
        ),
        c=[0.0, 0.0, 0.0],
        rho=0.0,
        mu=[[0.0, 0.0, 0.0], [-1.0, 3.0, 4.0], [-4.0, 2.0, 10.0]],
        horizon=1.0,
        cost_mode="discrete",
        K=[-3.0, -1.0],
        states=("low", "med", "high"),
        actions=("none", "minimal", "maximal"),
    )
    return model, {
        "description": "technology-adoption timing with per-observation "
                       "opportunity costs (discrete information costs)",
        "R": 60,
        "initial": np.full(3, 1.0 / 3.0),
    }


def _targeting():
    model = make_model(
        n=4,
        Q=[[-1.0, 0.5, 0.5, 0.0],
           [0.5, -1.5, 0.5, 0.5],
           [1.0, 0.5, -2.0, 0.5],
           [0.0, 1.0, 0.5, -1.5]],
        lam=[4.0, 3.0, 2.0, 1.0],
        c=[-0.2, -0.2, -0.2, -0.2],
        rho=0.0,
        mu=[[1.0, 0.0, 1.0, 0.0]],
        horizon=2.0,
        states=("libertarian", "conservative", "progressive", "socialist"),
        actions=("act",),
    )
    return model, {
        "description": "timing a one-shot action to maximize the chance "
                       "the hidden climate is favorable, net of waiting "
                       "costs",
        "R": 25,
        "initial": np.full(4, 0.25),
    }


PRESETS = {
    "insurance": _insurance,
    "regime": _regime,
    "reliability": _reliability,
    "reliability2": _reliability2,
    "techadopt": _techadopt,
    "targeting": _targeting,
}


def preset_names():
    return list(PRESETS)


def load_preset(name):
    """(model, info) for a named preset."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown example {name!r}; available: {', '.join(PRESETS)}"
        ) from None
    return factory()
