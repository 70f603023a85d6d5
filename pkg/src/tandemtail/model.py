"""Three-node tandem queue model: parameters, stability validation, derived constants.

Node i receives an exogenous Brownian input with drift ``lam[i]`` and volatility
``sigma[i]`` and serves at constant rate ``c[i]``; the output of node i feeds
node i+1.  Everything downstream (kernel geometry, simulation) reads its
constants from a :class:`ValidatedModel`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

__all__ = [
    "StabilityMode",
    "UnstableModel",
    "DegenerateK1",
    "ModelParams",
    "DerivedConstants",
    "ValidatedModel",
    "validate",
    "net_flow_drift",
]

REFLECTION_MATRIX = ((1.0, 0.0, 0.0), (-1.0, 1.0, 0.0), (0.0, -1.0, 1.0))


class StabilityMode(str, Enum):
    REFINED = "refined"
    WEAK = "weak"


class UnstableModel(ValueError):
    """The requested stability condition fails; the message names the violated inequality."""


class DegenerateK1(ValueError):
    """c2 - lam2 - c1 == 0, so the branch-geometry ratio k1 is undefined."""


@dataclass(frozen=True)
class ModelParams:
    """Arrival rates, service rates and volatilities for the three nodes.

    ``lam`` are arrival-rate drifts (per unit time), ``c`` service rates
    (per unit time), ``sigma`` volatilities (per sqrt time).  All nine
    entries must be strictly positive.
    """

    lam: tuple[float, float, float]
    c: tuple[float, float, float]
    sigma: tuple[float, float, float]

    def __post_init__(self) -> None:
        for name in ("lam", "c", "sigma"):
            vec = getattr(self, name)
            if len(vec) != 3:
                raise ValueError(f"{name} must have exactly 3 entries, got {len(vec)}")
            object.__setattr__(self, name, tuple(float(v) for v in vec))
            if any(not v > 0.0 for v in getattr(self, name)):
                raise ValueError(f"all entries of {name} must be strictly positive")


@dataclass(frozen=True)
class DerivedConstants:
    """Constants shared by the kernel and simulation layers.

    ``drift`` is the net-flow drift vector
    (lam1-c1, lam2+c1-c2, lam3+c2-c3); ``k1`` the ratio
    (c1-lam1)*sigma2^2 / ((c2-lam2-c1)*sigma1^2) locating the ray on which
    the reduced kernel lives; ``reflection`` the unit-lower-bidiagonal
    reflection matrix.
    """

    drift: tuple[float, float, float]
    k1: float
    reflection: tuple[tuple[float, float, float], ...] = REFLECTION_MATRIX


@dataclass(frozen=True)
class ValidatedModel:
    params: ModelParams
    derived: DerivedConstants
    mode: StabilityMode
    refined_ok: bool

    @property
    def lam(self) -> tuple[float, float, float]:
        return self.params.lam

    @property
    def c(self) -> tuple[float, float, float]:
        return self.params.c

    @property
    def sigma(self) -> tuple[float, float, float]:
        return self.params.sigma

    @property
    def k1(self) -> float:
        return self.derived.k1


def net_flow_drift(params: ModelParams) -> tuple[float, float, float]:
    """Drift of the free (unreflected) net-flow process, one entry per node."""
    lam, c = params.lam, params.c
    return (lam[0] - c[0], lam[1] + c[0] - c[1], lam[2] + c[1] - c[2])


def _refined_violation(params: ModelParams) -> str | None:
    lam, c = params.lam, params.c
    if not lam[0] < c[0]:
        return "lambda1 < c1 violated"
    if not lam[1] + c[0] < c[1]:
        return "lambda2 + c1 < c2 violated"
    if not lam[2] + c[1] < c[2]:
        return "lambda3 + c2 < c3 violated"
    return None


def _weak_violation(params: ModelParams) -> str | None:
    lam, c = params.lam, params.c
    names = ("lambda1 < c1", "lambda1 + lambda2 < c2", "lambda1 + lambda2 + lambda3 < c3")
    total = 0.0
    for k in range(3):
        total += lam[k]
        if not total < c[k]:
            return f"{names[k]} violated"
    return None


def validate(params: ModelParams, mode: StabilityMode | str = StabilityMode.REFINED) -> ValidatedModel:
    """Check the selected stability condition and bundle the derived constants.

    Raises :class:`UnstableModel` when the condition fails and
    :class:`DegenerateK1` when k1 is undefined (only reachable in weak mode).
    Pure function: no state, same input gives the same output.
    """
    mode = StabilityMode(mode)
    violation = _refined_violation(params) if mode is StabilityMode.REFINED else _weak_violation(params)
    if violation is not None:
        raise UnstableModel(violation)

    lam, c, sigma = params.lam, params.c, params.sigma
    denom = (c[1] - lam[1] - c[0]) * sigma[0] ** 2
    if denom == 0.0:
        raise DegenerateK1("c2 - lambda2 - c1 = 0: k1 is undefined")
    k1 = (c[0] - lam[0]) * sigma[1] ** 2 / denom

    derived = DerivedConstants(drift=net_flow_drift(params), k1=k1)
    return ValidatedModel(
        params=params,
        derived=derived,
        mode=mode,
        refined_ok=_refined_violation(params) is None,
    )
