"""Pinned experiment systems.

Everything the acceptance experiments and the CLI's ``builtin:`` class specs
need lives here as frozen literals: the 8-member two-state class driving the
regret/gap/switching experiments, the small curated sets used by the solver
cross-checks, and a rejection sampler for random validated systems.

The 8-member class was constructed so that the experiments exercise every
code path non-trivially:

* ``star`` is the true system.  ``clone`` sits close to it in Markov-parameter
  distance (0.29) with a slightly *lower* optimal cost, so optimistic model
  selection keeps playing the clone and pays a small per-step excess (~0.20)
  — the regret signal measured by the scaling experiments.
* the six far members have clearly higher optimal cost (3.31-3.66) and
  Markov distances 0.22-0.66: large enough for the online regression to
  expel them from confidence sets within a few switches, small enough that
  warm-up pruning keeps all eight members in play.
* the certainty-equivalent controller of every member stabilizes the true
  system, so the class is fully cross-playable and the minimax table is
  finite, with ``star`` the minimax winner.

``benchmark_learner()`` carries the calibrated knob settings for this class
(fitted once, at horizon 32000): with them the median regret slope over
seeds lands near 0.49, confidence sets narrow to {star, clone} while always
retaining the truth, and runs switch 2-4 times per 32k steps.
"""

import math

import numpy as np

from . import lqg, vtr
from .model_class import SimulatorClass, validate_assumptions

__all__ = [
    "BENCHMARK_TRUE_ID",
    "benchmark_cost",
    "benchmark_class",
    "benchmark_learner",
    "builtin_class",
    "builtin_names",
    "consistency_systems",
    "reduction_systems",
    "random_validated_system",
]

BENCHMARK_TRUE_ID = "star"


def _rot(theta, radius):
    """2x2 rotation scaled to spectral radius ``radius``."""
    c, s = math.cos(theta), math.sin(theta)
    return [[radius * c, -radius * s], [radius * s, radius * c]]


# (name, A, B, C); two-state, one action, one observation each.
_BENCHMARK_MEMBERS = (
    ("star", _rot(0.5, 0.72), [[1.0], [0.25]], [[1.0, 0.35]]),
    ("clone",
     [[0.64519942, -0.30627207], [-0.24253376, 0.61385881]],
     [[0.85861936], [0.48974498]],
     [[1.04172062, 0.39889751]]),
    ("f2", _rot(0.95, 0.70), [[0.9], [0.35]], [[1.15, 0.40]]),
    ("f4", _rot(0.55, 0.88), [[1.0], [0.30]], [[1.00, 0.30]]),
    ("f5", _rot(1.25, 0.75), [[0.85], [0.40]], [[1.20, 0.25]]),
    ("f6", _rot(-0.60, 0.62), [[1.15], [0.30]], [[1.25, 0.50]]),
    ("f7", _rot(0.30, 0.85), [[0.95], [0.18]], [[1.12, 0.38]]),
    ("f8", _rot(0.75, 0.82), [[1.05], [0.28]], [[1.05, 0.42]]),
)


def benchmark_cost():
    """Stage-cost weights used with the 8-member class.

    Returns
    -------
    CostSpec
        Q = [[1.0]], R = [[0.3]].
    """
    return lqg.CostSpec([[1.0]], [[0.3]])


def benchmark_class():
    """The 8-member two-state class used by the online-learning experiments.

    Returns
    -------
    SimulatorClass
        All eight members pass validation; the true system is the member
        named ``"star"`` (see ``BENCHMARK_TRUE_ID``).
    """
    systems = [lqg.LqgSystem(A, B, C, name=n)
               for n, A, B, C in _BENCHMARK_MEMBERS]
    return SimulatorClass(systems, benchmark_cost())


def benchmark_learner(seed=0, **overrides):
    """Calibrated learner settings for :func:`benchmark_class`.

    Parameters
    ----------
    seed : int
        Run seed (forwarded into the config).
    **overrides
        Any :class:`~lqgvtr.vtr.LearnerConfig` field, replacing the
        calibrated value.

    Returns
    -------
    LearnerConfig
    """
    base = dict(T_w=600, H_tilde=30, l=22, psi=6000.0, beta_scale=4.5e-4,
                d_mode="empirical", seed=seed)
    base.update(overrides)
    return vtr.LearnerConfig(**base)


def consistency_systems():
    """Five validated systems of varied shape for cost cross-checks.

    Returns
    -------
    list of (LqgSystem, CostSpec)
        Dimensions range over n in {1, 2, 3}, m in {1, 2}, p in {1, 2}.
        The first entry (A = 0 scalar) has optimal average cost exactly 2.
    """
    return [
        (lqg.LqgSystem([[0.0]], [[1.0]], [[1.0]], name="scalar0"),
         lqg.CostSpec([[1.0]], [[1.0]])),
        (lqg.LqgSystem([[0.5]], [[1.0]], [[1.3]], name="scalar5"),
         lqg.CostSpec([[1.0]], [[0.5]])),
        (lqg.LqgSystem(_rot(0.5, 0.72), [[1.0], [0.25]], [[1.0, 0.35]],
                       name="star"),
         benchmark_cost()),
        (lqg.LqgSystem([[0.6, 0.15], [-0.1, 0.45]], [[0.8], [0.3]],
                       [[1.0, 0.0], [0.2, 0.9]], name="wide"),
         lqg.CostSpec(np.diag([1.0, 0.5]), [[0.4]])),
        (lqg.LqgSystem([[0.55, 0.2, 0.0], [0.0, 0.5, 0.25], [0.1, 0.0, 0.35]],
                       [[1.0, 0.0], [0.0, 0.8], [0.3, 0.2]],
                       [[1.0, 0.3, 0.0]], name="deep"),
         lqg.CostSpec([[1.2]], np.diag([0.5, 0.7]))),
    ]


def reduction_systems():
    """Three systems whose horizon-H optimal cost offset is clearly nonzero.

    Returns
    -------
    list of (LqgSystem, CostSpec)
        The scalar A = 0 system is deliberately absent: its offset is
        identically zero, which degenerates relative-spread checks.
    """
    picks = ("scalar5", "star", "deep")
    return [(s, c) for s, c in consistency_systems() if s.name in picks]


def random_validated_system(rng, n_max=5, m_max=5, p_max=5, max_tries=200):
    """Rejection-sample a random system that passes validation.

    Parameters
    ----------
    rng : numpy.random.Generator
    n_max, m_max, p_max : int
        Upper bounds (inclusive) on the state/action/observation sizes.
    max_tries : int
        Attempts before giving up.

    Returns
    -------
    (LqgSystem, CostSpec)

    Raises
    ------
    RuntimeError
        If no draw validates within ``max_tries``.
    """
    for _ in range(max_tries):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, m_max + 1))
        p = int(rng.integers(1, p_max + 1))
        A = rng.normal(size=(n, n))
        radius = max(abs(np.linalg.eigvals(A)))
        if radius > 0:
            A *= rng.uniform(0.2, 0.9) / radius
        B = rng.normal(size=(n, m))
        C = rng.normal(size=(p, n))
        q = rng.uniform(0.5, 2.0, size=p)
        r = rng.uniform(0.3, 1.5, size=m)
        system = lqg.LqgSystem(A, B, C)
        cost = lqg.CostSpec(np.diag(q), np.diag(r))
        if validate_assumptions(system, cost).passed:
            return system, cost
    raise RuntimeError("no validated system found in %d tries" % max_tries)


_BUILTINS = {"benchmark8": benchmark_class}


def builtin_names():
    """Names accepted by :func:`builtin_class`."""
    return sorted(_BUILTINS)


def builtin_class(name):
    """Look up a built-in simulator class by name.

    Parameters
    ----------
    name : str
        One of :func:`builtin_names` (currently ``"benchmark8"``).

    Returns
    -------
    SimulatorClass

    Raises
    ------
    ValueError
        Unknown name.
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ValueError("unknown builtin class %r (have: %s)"
                         % (name, ", ".join(builtin_names()))) from None
    return factory()
