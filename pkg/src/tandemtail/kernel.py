"""Kernel geometry and exact tail predictions for the tandem queue.

The stationary moment generating functions of the queue satisfy a quadratic
kernel relation.  Restricted to the ray through the maximizing point, the
kernel becomes a one-parameter quadratic whose branch points and fixed point
(on the lower solution branch) locate the dominant singularity of the
downstream-node transform.  The singularity's position gives the exponential
decay rate of the stationary tail, its type (simple pole, pole meeting the
branch point, or bare branch point) the polynomial prefactor exponent in
{0, -1/2, -3/2}.

The same machinery runs at dimension 2 for the middle node (its first two
buffers form a self-contained two-node tandem), so one code path serves both.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

from .model import StabilityMode, ValidatedModel

__all__ = [
    "Regime",
    "OutsideBranchCut",
    "UnsupportedStabilityMode",
    "KernelAssumptionWarning",
    "KernelGeometry",
    "AsymptoticPrediction",
    "JointTailPredictor",
    "KernelReport",
    "ReducedKernel",
    "reduce_full",
    "reduce_upstream_pair",
    "kernel_value",
    "delta",
    "y_branches",
    "z_branches",
    "branch_points",
    "z_star",
    "classify_node3",
    "marginal_asymptotics",
    "tauberian_exponent",
    "joint_tail_predictor",
    "boundary_identity_point",
    "regulator_rates",
    "kernel_report",
]

FIXED_POINT_TOL = 1e-9
TANGENCY_TOL = 1e-7


class Regime(str, Enum):
    SIMPLE_POLE = "SimplePole"
    POLE_AT_BRANCH = "PoleAtBranch"
    BRANCH_POINT = "BranchPoint"


_MU_FOR_REGIME = {
    Regime.SIMPLE_POLE: 0.0,
    Regime.POLE_AT_BRANCH: -0.5,
    Regime.BRANCH_POINT: -1.5,
}


class OutsideBranchCut(ValueError):
    """Branch evaluation requested outside the real interval where the discriminant is >= 0."""


class UnsupportedStabilityMode(ValueError):
    """Kernel analytics require the refined stability inequalities to hold."""


class KernelAssumptionWarning(UserWarning):
    """A parameter relationship the analytic derivation treats as a special case."""


@dataclass(frozen=True)
class KernelGeometry:
    """Branch points of both kernel directions plus the candidate singularities."""

    z_min: float
    z_max: float
    y_min: float
    y_max: float
    y_tilde_m: float
    z_star: float | None


@dataclass(frozen=True)
class AsymptoticPrediction:
    """Predicted stationary tail P(L_node > z) ~ const * z^mu * exp(-alpha z)."""

    node: int
    alpha: float
    mu: float
    regime: Regime

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"decay rate must be positive, got {self.alpha}")
        if self.mu != _MU_FOR_REGIME[self.regime]:
            raise ValueError(f"regime {self.regime.value} requires mu={_MU_FOR_REGIME[self.regime]}, got {self.mu}")


@dataclass(frozen=True)
class JointTailPredictor:
    """Unnormalized joint tail shape prod_i x_i^mu_i exp(-alpha_i x_i).

    Only ratios across evaluation points are meaningful; the multiplicative
    constant is left at 1 and estimated empirically elsewhere.
    """

    alphas: tuple[float, float, float]
    mus: tuple[float, float, float]

    def log_value(self, x: float, y: float, z: float) -> float:
        total = 0.0
        for coord, alpha, mu in zip((x, y, z), self.alphas, self.mus):
            total -= alpha * coord
            if mu != 0.0:
                total += mu * math.log(coord)
        return total

    def value(self, x: float, y: float, z: float) -> float:
        return math.exp(self.log_value(x, y, z))


@dataclass(frozen=True)
class KernelReport:
    """Everything the analytic side predicts for one validated model."""

    predictions: tuple[AsymptoticPrediction, AsymptoticPrediction, AsymptoticPrediction]
    geometry: KernelGeometry
    geometry_pair: KernelGeometry
    boundary_point: tuple[float, float]
    regulator_rates: tuple[float, float, float]

    def prediction(self, node: int) -> AsymptoticPrediction:
        return self.predictions[node - 1]


# ---------------------------------------------------------------------------
# reduced kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedKernel:
    """Quadratic kernel restricted to the maximizing ray: -S/2 u^2 + A u - s/2 v^2 + b v.

    ``v`` is the target coordinate (the node whose tail is analyzed), ``u``
    the reduced upstream coordinate.  ``k`` is the upstream scaling vector
    applied before reduction.
    """

    a: float
    s_u: float
    b: float
    s_v: float
    k: tuple[float, ...]

    def delta(self, v: float) -> float:
        """Discriminant of the restricted kernel as a quadratic in u."""
        return self.a * self.a + 2.0 * self.s_u * (self.b * v - 0.5 * self.s_v * v * v)

    def delta_bar(self, u: float) -> float:
        """Discriminant in the other direction (quadratic in v)."""
        return self.b * self.b + 2.0 * self.s_v * (self.a * u - 0.5 * self.s_u * u * u)

    def _sqrt_disc(self, value: float, where: str) -> float:
        scale = max(self.a * self.a, self.b * self.b, 1e-300)
        if value < -1e-12 * scale:
            raise OutsideBranchCut(f"{where} is negative: {value:.6g}")
        return math.sqrt(max(value, 0.0))

    def u_branches(self, v: float) -> tuple[float, float]:
        """The two u-solutions at fixed v, lower branch first."""
        r = self._sqrt_disc(self.delta(v), "discriminant")
        return ((self.a - r) / self.s_u, (self.a + r) / self.s_u)

    def v_branches(self, u: float) -> tuple[float, float]:
        """The two v-solutions at fixed u, lower branch first."""
        r = self._sqrt_disc(self.delta_bar(u), "transposed discriminant")
        return ((self.b - r) / self.s_v, (self.b + r) / self.s_v)

    # branch points, computed cancellation-free (positive root explicit,
    # negative root via the product of roots)
    def v_max(self) -> float:
        half = self.b / self.s_v
        return half + math.sqrt(half * half + self.a * self.a / (self.s_u * self.s_v))

    def v_min(self) -> float:
        return -self.a * self.a / (self.s_u * self.s_v * self.v_max())

    def u_max(self) -> float:
        half = self.a / self.s_u
        return half + math.sqrt(half * half + self.b * self.b / (self.s_u * self.s_v))

    def u_min(self) -> float:
        return -self.b * self.b / (self.s_u * self.s_v * self.u_max())

    def u_tilde(self) -> float:
        """Value of the lower u-branch at both v-branch points: A/S."""
        return self.a / self.s_u

    def pole_candidate(self) -> float:
        """Nonzero root of (U0(v)-v)(U1(v)-v): the closed-form pole location."""
        return 2.0 * (self.a + self.b) / (self.s_u + self.s_v)

    def pole_exists(self) -> bool:
        """Lower-branch fixed point exists in (0, v_max] iff the branch value there clears v_max."""
        vmax = self.v_max()
        return self.u_tilde() >= vmax - 1e-12 * max(1.0, abs(vmax))

    def chord(self) -> float:
        """Right edge of the negative-branch span: 2b/s, where U0 returns to zero."""
        return 2.0 * self.b / self.s_v

    def fixed_point(self) -> float:
        """Root of U0(v) = v in (chord, v_max], by bisection plus Newton polish.

        Precondition: ``pole_exists()``.  The closed-form candidate is used
        only as a cross-check; bracketing on the provably sign-changing
        interval is authoritative.
        """
        lo, hi = self.chord(), self.v_max()

        def g(v: float) -> float:
            return self.u_branches(v)[0] - v

        glo, ghi = g(lo), g(hi)
        if ghi < 0.0:
            if ghi >= -FIXED_POINT_TOL * max(1.0, hi):
                return hi
            raise ValueError("fixed point bracket lost; call pole_exists() first")
        if glo > 0.0:
            raise ValueError("fixed point bracket lost; call pole_exists() first")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if g(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        v = hi
        # Newton polish; derivative of U0 is (s_v v - b)/sqrt(delta)
        for _ in range(5):
            d = self.delta(v)
            if d <= 0.0:
                break
            slope = (self.s_v * v - self.b) / math.sqrt(d) - 1.0
            if slope == 0.0:
                break
            step = (self.u_branches(v)[0] - v) / slope
            v_new = v - step
            if not lo <= v_new <= hi * (1.0 + 1e-12):
                break
            v = v_new
        return min(v, self.v_max())

    def classify(self, tangency_tol: float = TANGENCY_TOL) -> tuple[float, float, Regime, float | None]:
        """Three-case decision: (alpha, mu, regime, fixed point or None)."""
        vmax = self.v_max()
        if not self.pole_exists():
            return vmax, -1.5, Regime.BRANCH_POINT, None
        vstar = self.fixed_point()
        resid = abs(self.u_branches(vstar)[0] - vstar)
        if resid > FIXED_POINT_TOL * max(1.0, vstar):
            return vmax, -1.5, Regime.BRANCH_POINT, None
        if abs(vstar - vmax) <= tangency_tol * max(1.0, vmax):
            return vmax, -0.5, Regime.POLE_AT_BRANCH, vstar
        return vstar, 0.0, Regime.SIMPLE_POLE, vstar

    def geometry(self) -> KernelGeometry:
        _, _, _, vstar = self.classify()
        return KernelGeometry(
            z_min=self.v_min(),
            z_max=self.v_max(),
            y_min=self.u_min(),
            y_max=self.u_max(),
            y_tilde_m=self.u_tilde(),
            z_star=vstar,
        )


def _require_refined(model: ValidatedModel) -> None:
    if not model.refined_ok:
        raise UnsupportedStabilityMode(
            "kernel analytics need lambda1 < c1, lambda2 + c1 < c2 and lambda3 + c2 < c3; "
            f"this model was accepted only under {model.mode.value} stability"
        )


def reduce_full(model: ValidatedModel) -> ReducedKernel:
    """Reduction targeting node 3, on the ray x = k1*y through the maximizing point."""
    _require_refined(model)
    lam, c, sigma = model.lam, model.c, model.sigma
    k1 = model.k1
    if abs(k1 - 1.0) < 1e-12:
        warnings.warn(
            "k1 == 1: a special case of the analytic derivation; the limiting formulas "
            "remain finite and are used as-is",
            KernelAssumptionWarning,
            stacklevel=3,
        )
    return ReducedKernel(
        a=(c[0] - lam[0]) * k1 + (c[1] - lam[1] - c[0]),
        s_u=sigma[0] ** 2 * k1 * k1 + sigma[1] ** 2,
        b=c[2] - lam[2] - c[1],
        s_v=sigma[2] ** 2,
        k=(k1, 1.0, 1.0),
    )


def reduce_upstream_pair(model: ValidatedModel) -> ReducedKernel:
    """Reduction targeting node 2: the first two buffers form a self-contained tandem."""
    _require_refined(model)
    lam, c, sigma = model.lam, model.c, model.sigma
    return ReducedKernel(
        a=c[0] - lam[0],
        s_u=sigma[0] ** 2,
        b=c[1] - lam[1] - c[0],
        s_v=sigma[1] ** 2,
        k=(1.0,),
    )


# ---------------------------------------------------------------------------
# model-level operations
# ---------------------------------------------------------------------------


def kernel_value(model: ValidatedModel, x: float, y: float, z: float) -> float:
    """The full quadratic kernel H(x, y, z)."""
    lam, c, sigma = model.lam, model.c, model.sigma
    return (
        -0.5 * (sigma[0] ** 2 * x * x + sigma[1] ** 2 * y * y + sigma[2] ** 2 * z * z)
        + (c[0] - lam[0]) * x
        + (c[1] - lam[1] - c[0]) * y
        + (c[2] - lam[2] - c[1]) * z
    )


def delta(model: ValidatedModel, z: float) -> float:
    """Discriminant of the node-3 reduced kernel at z."""
    return reduce_full(model).delta(z)


def y_branches(model: ValidatedModel, z: float) -> tuple[float, float]:
    """Both y-solutions of the reduced kernel at fixed z (lower, upper)."""
    return reduce_full(model).u_branches(z)


def z_branches(model: ValidatedModel, y: float) -> tuple[float, float]:
    """Both z-solutions of the reduced kernel at fixed y (lower, upper)."""
    return reduce_full(model).v_branches(y)


def branch_points(model: ValidatedModel) -> KernelGeometry:
    """Branch points in both directions plus the fixed point when it exists."""
    return reduce_full(model).geometry()


def z_star(model: ValidatedModel) -> float | None:
    """Fixed point of the lower branch in (0, z_max], or None when absent.

    The closed-form candidate can land on the upper branch for some models,
    so existence is gated by the branch value at z_max and the returned
    value is always re-verified against the fixed-point residual.
    """
    rk = reduce_full(model)
    _, _, _, vstar = rk.classify()
    return vstar


def classify_node3(model: ValidatedModel, tangency_tol: float = TANGENCY_TOL) -> AsymptoticPrediction:
    """Tail regime of the third buffer.

    ``tangency_tol`` decides when the fixed point and the branch point are
    treated as coincident; the coincident case is a measure-zero parameter
    set, so any finite tolerance is a modeling choice.
    """
    alpha, mu, regime, _ = reduce_full(model).classify(tangency_tol)
    return AsymptoticPrediction(node=3, alpha=alpha, mu=mu, regime=regime)


def marginal_asymptotics(
    model: ValidatedModel, node: int, tangency_tol: float = TANGENCY_TOL
) -> AsymptoticPrediction:
    """Predicted (alpha, mu, regime) for one node's stationary tail.

    Node 1 is a one-dimensional reflected Brownian motion whose stationary
    law is exactly exponential; nodes 2 and 3 run the reduced-kernel
    pipeline at dimensions 2 and 3 respectively.
    """
    if node == 1:
        lam, c, sigma = model.lam, model.c, model.sigma
        alpha = 2.0 * (c[0] - lam[0]) / sigma[0] ** 2
        return AsymptoticPrediction(node=1, alpha=alpha, mu=0.0, regime=Regime.SIMPLE_POLE)
    if node == 2:
        alpha, mu, regime, _ = reduce_upstream_pair(model).classify(tangency_tol)
        return AsymptoticPrediction(node=2, alpha=alpha, mu=mu, regime=regime)
    if node == 3:
        return classify_node3(model, tangency_tol)
    raise ValueError(f"node must be 1, 2 or 3, got {node}")


def tauberian_exponent(regime: Regime) -> tuple[float, float]:
    """Map a singularity type to (transform exponent, tail prefactor exponent).

    A transform behaving like (alpha - z)^(-lambda) transfers to a density
    t^(lambda-1) e^(-alpha t); the bare branch point needs one extra
    differentiation step, landing at lambda = -1/2 and prefactor t^(-3/2).
    """
    regime = Regime(regime)
    if regime is Regime.SIMPLE_POLE:
        return (1.0, 0.0)
    if regime is Regime.POLE_AT_BRANCH:
        return (0.5, -0.5)
    return (-0.5, -1.5)


def joint_tail_predictor(model: ValidatedModel) -> JointTailPredictor:
    """Bundle all three marginal predictions into the product-form joint tail."""
    preds = tuple(marginal_asymptotics(model, n) for n in (1, 2, 3))
    return JointTailPredictor(
        alphas=tuple(p.alpha for p in preds),
        mus=tuple(p.mu for p in preds),
    )


def boundary_identity_point(model: ValidatedModel) -> tuple[float, float]:
    """The checkable boundary-transform identity: at z0 = 2(c3-lam3-c2)/sigma3^2 the
    node-2 boundary transform weighted by exp(z0*L3) equals c3 - lam1 - lam2 - lam3."""
    lam, c, sigma = model.lam, model.c, model.sigma
    z0 = 2.0 * (c[2] - lam[2] - c[1]) / sigma[2] ** 2
    return z0, c[2] - lam[0] - lam[1] - lam[2]


def regulator_rates(model: ValidatedModel) -> tuple[float, float, float]:
    """Stationary regulator growth rates: c_k minus the cumulative arrival rate."""
    lam, c = model.lam, model.c
    return (c[0] - lam[0], c[1] - lam[0] - lam[1], c[2] - lam[0] - lam[1] - lam[2])


def kernel_report(model: ValidatedModel) -> KernelReport:
    """Full analytic prediction set for one model."""
    predictions = tuple(marginal_asymptotics(model, n) for n in (1, 2, 3))
    return KernelReport(
        predictions=predictions,
        geometry=reduce_full(model).geometry(),
        geometry_pair=reduce_upstream_pair(model).geometry(),
        boundary_point=boundary_identity_point(model),
        regulator_rates=regulator_rates(model),
    )
