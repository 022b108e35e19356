"""Density-to-flow functions, their derived quantities, and perturbations.

A flow function maps link density to link flow: zero at zero density,
strictly increasing, continuously differentiable with bounded derivative,
and saturating at a finite capacity.  The built-in family is the
saturating exponential ``capacity * (1 - exp(-rate * rho))``; arbitrary
callables are accepted through :class:`CustomFlow` but must pass sampled
certification before use.

A perturbation replaces flow functions with pointwise-smaller ones.  Its
magnitude is the sum over links of the sup-norm reductions, and its
stretching coefficient is the worst-case inflation of the half-capacity
("median") density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .topology import NetworkTopology, TopologyError

__all__ = [
    "FlowFunction",
    "ExponentialFlow",
    "CustomFlow",
    "FlowNetwork",
    "PerturbationSpec",
    "InadmissiblePerturbation",
    "scale_perturbation",
    "supremum_gap",
]

CERTIFICATION_GRID_POINTS = 10_000
SUP_GRID_POINTS = 4_096
SUP_STABLE_TOL = 1e-6


class InadmissiblePerturbation(ValueError):
    """Perturbed flow function is not admissible (exceeds the original somewhere)."""


class FlowFunction:
    """Base class; subclasses provide ``__call__`` (vectorized) and ``f_max``."""

    f_max: float

    def __call__(self, rho):
        raise NotImplementedError

    def eval(self, rho: float) -> float:
        """Flow at a single nonnegative density."""
        if rho < 0:
            raise ValueError(f"negative density {rho}")
        return float(self(rho))

    def inverse(self, f: float) -> float:
        """Density at which the flow equals ``f``; requires 0 <= f < f_max."""
        if not 0 <= f < self.f_max:
            raise ValueError(f"flow {f} outside [0, f_max={self.f_max}); no finite preimage")
        if f == 0:
            return 0.0
        hi = 1.0
        while self.eval(hi) < f:
            hi *= 2.0
            if hi > 1e12:
                raise ValueError(f"no density found with flow {f}")
        return brentq(lambda r: self.eval(r) - f, 0.0, hi, xtol=1e-14, rtol=1e-15)

    def median_density(self) -> float:
        """The unique density carrying half the capacity."""
        return self.inverse(self.f_max / 2.0)

    def derivative(self, rho: float) -> float:
        h = 1e-6 * max(1.0, abs(rho))
        lo = max(rho - h, 0.0)
        return (self.eval(rho + h) - self.eval(lo)) / (rho + h - lo)

    def rate_scale(self) -> float:
        """Fastest local relaxation rate: the derivative at zero density."""
        return self.derivative(0.0)

    def scaled(self, eps: float) -> "FlowFunction":
        return scale_perturbation(self, eps)

    def certify(self, n_points: int = 512) -> list:
        """Sampled Assumption-style checks; returns violation messages."""
        violations = []
        if self.eval(0.0) != 0.0:
            violations.append("flow at zero density is not zero")
        if not self.f_max > 0 or not math.isfinite(self.f_max):
            violations.append("capacity must be finite and positive")
            return violations
        try:
            hi = 50.0 * self.median_density()
        except ValueError as exc:
            violations.append(f"median density undefined: {exc}")
            return violations
        grid = np.concatenate([[0.0], np.geomspace(1e-6, hi, n_points)])
        vals = np.asarray(self(grid), dtype=float)
        if np.any(np.diff(vals) <= 0):
            violations.append("not strictly increasing on the certification grid")
        if np.any(vals > self.f_max):
            violations.append("exceeds its capacity at finite density")
        if vals[-1] < 0.999 * self.f_max:
            violations.append("does not approach its capacity (saturation check failed)")
        return violations


@dataclass(frozen=True)
class ExponentialFlow(FlowFunction):
    """``f_max * (1 - exp(-rate * rho))``: the canonical saturating family."""

    rate: float
    f_max: float

    def __post_init__(self):
        if not (self.rate > 0 and self.f_max > 0):
            raise ValueError("rate and capacity must be positive")

    def __call__(self, rho):
        return self.f_max * -np.expm1(-self.rate * np.asarray(rho, dtype=float))

    def inverse(self, f: float) -> float:
        if not 0 <= f < self.f_max:
            raise ValueError(f"flow {f} outside [0, f_max={self.f_max}); no finite preimage")
        return -math.log1p(-f / self.f_max) / self.rate

    def median_density(self) -> float:
        return math.log(2.0) / self.rate

    def derivative(self, rho: float) -> float:
        return self.rate * self.f_max * math.exp(-self.rate * rho)

    def rate_scale(self) -> float:
        return self.rate * self.f_max

    def to_dict(self) -> dict:
        return {"family": "exp", "a": self.rate, "f_max": self.f_max}


class CustomFlow(FlowFunction):
    """Black-box flow function; ``certify()`` must pass before it is trusted."""

    def __init__(self, fn, f_max: float, name: str = "custom"):
        self.fn = fn
        self.f_max = float(f_max)
        self.name = name

    def __call__(self, rho):
        return self.fn(np.asarray(rho, dtype=float))

    def __repr__(self):
        return f"CustomFlow({self.name}, f_max={self.f_max})"


def scale_perturbation(ff: FlowFunction, eps: float) -> FlowFunction:
    """The uniformly scaled function ``eps * ff``.

    Scaling preserves the exponential family (only the capacity shrinks, the
    median density is unchanged).  ``eps`` must be positive: the zero
    function is not strictly increasing, hence not an admissible
    replacement.
    """
    if not 0 < eps <= 1:
        raise ValueError(f"scaling factor must be in (0, 1], got {eps}")
    if isinstance(ff, ExponentialFlow):
        return ExponentialFlow(ff.rate, eps * ff.f_max)
    return CustomFlow(lambda rho, _f=ff, _e=eps: _e * np.asarray(_f(rho)), eps * ff.f_max,
                      name=f"scaled({eps})")


def supremum_gap(base: FlowFunction, pert: FlowFunction) -> float:
    """sup over densities of ``base - pert``.

    Same-rate exponential pairs have the analytic value ``f_max - f_max~``.
    Otherwise the sup is taken on a geometric grid reaching 50x the larger
    median density, with the reach doubled until the value is stable to
    1e-6 (sound because both functions saturate).
    """
    if (
        isinstance(base, ExponentialFlow)
        and isinstance(pert, ExponentialFlow)
        and base.rate == pert.rate
    ):
        return base.f_max - pert.f_max
    hi = 50.0 * max(base.median_density(), pert.median_density())
    prev = -math.inf
    for _ in range(40):
        grid = np.concatenate([[0.0], np.geomspace(1e-4, hi, SUP_GRID_POINTS)])
        sup = float(np.max(np.asarray(base(grid)) - np.asarray(pert(grid))))
        if abs(sup - prev) < SUP_STABLE_TOL:
            return sup
        prev = sup
        hi *= 2.0
    raise RuntimeError("supremum grid did not stabilize")


def _certify_admissible(base: FlowFunction, pert: FlowFunction, link_id: int):
    """pert <= base everywhere, checked on a dense grid (analytic cases skip it)."""
    if (
        isinstance(base, ExponentialFlow)
        and isinstance(pert, ExponentialFlow)
        and pert.rate <= base.rate
        and pert.f_max <= base.f_max
    ):
        return
    hi = 50.0 * max(base.median_density(), pert.median_density())
    grid = np.concatenate([[0.0], np.geomspace(1e-6, hi, CERTIFICATION_GRID_POINTS)])
    excess = np.asarray(pert(grid)) - np.asarray(base(grid))
    worst = float(np.max(excess))
    if worst > 1e-12 or pert.f_max > base.f_max + 1e-12:
        raise InadmissiblePerturbation(
            f"link {link_id}: perturbed flow exceeds the original (worst excess {worst:.3e})"
        )


class FlowNetwork:
    """A topology paired with one flow function per link."""

    def __init__(self, topology: NetworkTopology, flow_functions: dict):
        missing = set(topology.link_ids) - set(flow_functions)
        extra = set(flow_functions) - set(topology.link_ids)
        if missing or extra:
            raise TopologyError(f"flow functions mismatch links (missing={sorted(missing)}, extra={sorted(extra)})")
        self.topology = topology
        self.flow_functions = dict(flow_functions)

    def flow_function(self, link_id: int) -> FlowFunction:
        return self.flow_functions[link_id]

    def capacities(self) -> dict:
        return {lid: self.flow_functions[lid].f_max for lid in self.topology.link_ids}

    def perturbed(self, spec: "PerturbationSpec") -> "FlowNetwork":
        fns = dict(self.flow_functions)
        fns.update(spec.replacements)
        return FlowNetwork(self.topology, fns)


class PerturbationSpec:
    """Per-link replacement flow functions, certified admissible at build time.

    Exposes the per-link gaps, the total magnitude (their sum), and the
    stretching coefficient (worst ratio of perturbed to original median
    density over all links; untouched links contribute 1).
    """

    def __init__(self, network: FlowNetwork, replacements: dict):
        unknown = set(replacements) - set(network.topology.link_ids)
        if unknown:
            raise TopologyError(f"perturbation names unknown links {sorted(unknown)}")
        self.network = network
        self.replacements = dict(replacements)
        self.gaps = {}
        worst_stretch = 1.0 if len(replacements) < len(network.topology.link_ids) else 0.0
        for lid, pert in sorted(self.replacements.items()):
            base = network.flow_function(lid)
            bad = pert.certify()
            if bad:
                raise InadmissiblePerturbation(f"link {lid}: replacement fails certification: {bad}")
            _certify_admissible(base, pert, lid)
            self.gaps[lid] = supremum_gap(base, pert)
            worst_stretch = max(worst_stretch, pert.median_density() / base.median_density())
        self.magnitude = math.fsum(self.gaps.values())
        self.stretching = worst_stretch

    @classmethod
    def scaling(cls, network: FlowNetwork, factors: dict) -> "PerturbationSpec":
        """Build from per-link scaling factors ``{link_id: eps}``."""
        return cls(network, {lid: network.flow_function(lid).scaled(e) for lid, e in factors.items()})

    def apply(self) -> FlowNetwork:
        return self.network.perturbed(self)


def perturbation_magnitude(spec: PerturbationSpec) -> float:
    return spec.magnitude


def stretching_coefficient(spec: PerturbationSpec) -> float:
    return spec.stretching
