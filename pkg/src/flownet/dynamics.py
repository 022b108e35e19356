"""Network density dynamics, trajectories, and limit flows.

Each link's density evolves as routed inflow minus density-dependent
outflow: for a link e out of node v,

    d rho_e / dt = lambda_v(t) * G_v_e(rho_v(t)) - mu_e(rho_e(t)),

where lambda_v is the constant network inflow at the origin and the sum of
incoming link flows elsewhere.  Trajectories are integrated with a
fixed-step classical Runge-Kutta scheme, which keeps runs reproducible
bit-for-bit for a given (scenario, dt).

The asymptotic flow is also computed directly: each node's stationary
split solves ``lambda * G(mu^-1(f)) = f`` (or pins every outgoing link at
capacity once ``lambda`` reaches the node's total outgoing capacity), and
cascading these local solutions through the acyclic order yields the
network limit flow.  The cascade is the fast oracle the simulations are
checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .flows import ExponentialFlow, FlowNetwork
from .routing import LogitPolicy, RoutingPolicy, finite_difference_jacobian
from .topology import topological_order

__all__ = [
    "SimulationConfig",
    "Trajectory",
    "LocalTrajectory",
    "TransferEstimate",
    "LimitFlow",
    "ConvergenceReport",
    "SimulationError",
    "LocalSolverError",
    "rhs",
    "simulate",
    "simulate_local",
    "alpha_transfer_estimate",
    "local_limit_flow",
    "network_limit_flow",
    "convergence_check",
    "detect_saturation",
    "limit_flow_estimate",
    "default_dt",
]


class SimulationError(RuntimeError):
    """Integration blew up (NaN/Inf or a density beyond the ceiling)."""


class LocalSolverError(RuntimeError):
    """Stationary-split iteration failed to converge; carries the best residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SimulationConfig:
    """Knobs for a single integration run.

    ``dt=None`` picks 0.01 over the fastest link relaxation rate (the
    flow-function derivative at zero density).  ``transfer_tol=None``
    resolves to 1e-3 times the inflow when a transfer verdict is computed.
    """

    inflow: float
    dt: float | None = None
    horizon: float = 200.0
    tail_fraction: float = 0.2
    transfer_tol: float | None = None
    sat_threshold: float = 0.999
    density_ceiling: float = 1e9
    record_stride: int = 1

    def __post_init__(self):
        if self.inflow < 0:
            raise ValueError("inflow must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.tail_fraction < 1:
            raise ValueError("tail_fraction must be in (0, 1)")
        if not 0 < self.sat_threshold < 1:
            raise ValueError("sat_threshold must be in (0, 1)")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


def default_dt(network: FlowNetwork) -> float:
    """0.01 over the fastest local relaxation rate among the links."""
    return 0.01 / max(ff.rate_scale() for ff in network.flow_functions.values())


class _Compiled:
    """Link arrays grouped by tail node for vectorized right-hand sides.

    Internally links are ordered by (tail, id) so per-node reductions are
    contiguous; ``arr_sorted[to_topo]`` converts back to the topology's
    id order and ``arr_topo[to_sorted]`` the other way.  All-exponential
    flow families and logit policies take fully vectorized paths; anything
    else falls back to per-link / per-node evaluation.
    """

    def __init__(self, network: FlowNetwork, policy: RoutingPolicy):
        topo = network.topology
        links = topo.links
        order = sorted(range(len(links)), key=lambda i: (links[i].tail, links[i].id))
        self.to_sorted = np.array(order)
        self.to_topo = np.argsort(order)
        self.links = [links[i] for i in order]
        self.tails = np.array([l.tail for l in self.links])
        self.heads = np.array([l.head for l in self.links])
        self.ffs = [network.flow_functions[l.id] for l in self.links]
        self.origin = topo.origin
        self.n_nodes = topo.num_nodes

        starts = [0] + [i for i in range(1, len(self.links)) if self.tails[i] != self.tails[i - 1]]
        self.group_starts = np.array(starts)
        self.group_nodes = self.tails[self.group_starts]
        self.group_of_link = np.repeat(np.arange(len(starts)),
                                       np.diff(np.append(self.group_starts, len(self.links))))

        self.head_mat = np.zeros((self.n_nodes, len(self.links)))
        self.head_mat[self.heads, np.arange(len(self.links))] = 1.0

        self._exp = all(isinstance(ff, ExponentialFlow) for ff in self.ffs)
        if self._exp:
            self.a_flow = np.array([ff.rate for ff in self.ffs])
            self.f_max = np.array([ff.f_max for ff in self.ffs])
        self._logit = isinstance(policy, LogitPolicy)
        self.policy = policy
        if self._logit:
            self.a_pol = np.array([policy.weights[l.id] for l in self.links])
            self.eta_link = np.array([policy.eta[l.tail] for l in self.links])

    def flows(self, rho: np.ndarray) -> np.ndarray:
        if self._exp:
            return self.f_max * -np.expm1(-self.a_flow * rho)
        return np.array([ff.eval(r) for ff, r in zip(self.ffs, rho)])

    def splits(self, rho: np.ndarray) -> np.ndarray:
        if self._logit:
            ex = -self.eta_link * rho
            ex = ex - np.maximum.reduceat(ex, self.group_starts)[self.group_of_link]
            w = self.a_pol * np.exp(ex)
            return w / np.add.reduceat(w, self.group_starts)[self.group_of_link]
        g = np.empty(len(self.links))
        for gi, v in enumerate(self.group_nodes):
            lo = self.group_starts[gi]
            hi = self.group_starts[gi + 1] if gi + 1 < len(self.group_starts) else len(self.links)
            g[lo:hi] = self.policy.route(v, rho[lo:hi])
        return g

    def rhs(self, rho: np.ndarray, inflow: float) -> np.ndarray:
        f = self.flows(rho)
        lam = self.head_mat @ f
        lam[self.origin] = inflow
        return lam[self.tails] * self.splits(rho) - f


def rhs(network: FlowNetwork, policy: RoutingPolicy, inflow: float, rho) -> np.ndarray:
    """d rho / dt at the given state, ordered like ``network.topology.links``."""
    compiled = _Compiled(network, policy)
    rho = np.asarray(rho, dtype=float)
    return compiled.rhs(rho[compiled.to_sorted], inflow)[compiled.to_topo]


@dataclass
class Trajectory:
    """Recorded integration output, all arrays in ``topology.links`` order.

    ``node_inflows[:, v]`` is the total inflow at node v: the constant
    network inflow at the origin, the sum of incoming link flows elsewhere
    (for the destination that is the network outflow).
    """

    times: np.ndarray
    rho: np.ndarray
    flows: np.ndarray
    node_inflows: np.ndarray
    link_ids: tuple
    inflow: float
    dt: float
    destination: int
    max_undershoot: float = 0.0

    @property
    def outflow(self) -> np.ndarray:
        return self.node_inflows[:, self.destination]

    def terminal_flow(self) -> np.ndarray:
        return self.flows[-1]

    def tail_slice(self, tail_fraction: float) -> slice:
        t0 = self.times[-1] - tail_fraction * (self.times[-1] - self.times[0])
        return slice(int(np.searchsorted(self.times, t0)), len(self.times))


@dataclass
class LocalTrajectory:
    times: np.ndarray
    rho: np.ndarray
    flows: np.ndarray
    max_undershoot: float = 0.0


def _integrate(deriv, rho0: np.ndarray, dt: float, horizon: float, ceiling: float,
               record_stride: int = 1):
    """Classical fixed-step RK4; clamps densities at zero and records the
    worst undershoot.  The step is shrunk to land exactly on the horizon."""
    n_steps = max(1, math.ceil(horizon / dt - 1e-12))
    dt = horizon / n_steps
    rho = np.array(rho0, dtype=float)
    times = [0.0]
    states = [rho.copy()]
    undershoot = 0.0
    t = 0.0
    for step in range(1, n_steps + 1):
        k1 = deriv(t, rho)
        k2 = deriv(t + 0.5 * dt, rho + 0.5 * dt * k1)
        k3 = deriv(t + 0.5 * dt, rho + 0.5 * dt * k2)
        k4 = deriv(t + dt, rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        low = rho.min()
        if low < 0.0:
            undershoot = max(undershoot, -low)
            rho = np.maximum(rho, 0.0)
        t = step * dt
        if not np.all(np.isfinite(rho)) or rho.max() > ceiling:
            raise SimulationError(
                f"integration unstable at t={t:.6g} (state={rho}); reduce dt or the horizon"
            )
        if step % record_stride == 0 or step == n_steps:
            times.append(t)
            states.append(rho.copy())
    return np.array(times), np.array(states), undershoot, dt


def simulate(network: FlowNetwork, policy: RoutingPolicy, config: SimulationConfig,
             rho0=None) -> Trajectory:
    """Integrate the network dynamics over [0, horizon].

    A perturbed run is this same operation on the perturbed network (the
    policy never changes; routers only see densities).
    """
    topo = network.topology
    compiled = _Compiled(network, policy)
    dt = config.dt if config.dt is not None else default_dt(network)
    if rho0 is None:
        rho0 = np.zeros(len(topo.links))
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (len(topo.links),):
        raise ValueError(f"rho0 must have one entry per link ({len(topo.links)})")
    if np.any(rho0 < 0):
        raise ValueError("initial densities must be nonnegative")
    rho0_sorted = rho0[compiled.to_sorted]

    deriv = lambda t, rho: compiled.rhs(rho, config.inflow)
    times, states, undershoot, dt_actual = _integrate(
        deriv, rho0_sorted, dt, config.horizon, config.density_ceiling, config.record_stride
    )
    rho_traj = states[:, compiled.to_topo]
    flows_sorted = np.array([compiled.flows(s) for s in states])
    flows_traj = flows_sorted[:, compiled.to_topo]
    lam = flows_sorted @ compiled.head_mat.T
    lam[:, topo.origin] = config.inflow
    return Trajectory(
        times=times,
        rho=rho_traj,
        flows=flows_traj,
        node_inflows=lam,
        link_ids=topo.link_ids,
        inflow=config.inflow,
        dt=dt_actual,
        destination=topo.destination,
        max_undershoot=undershoot,
    )


def simulate_local(flow_fns, route_fn, inflow_fn, rho0, dt: float, horizon: float,
                   ceiling: float = 1e9) -> LocalTrajectory:
    """Single-node dynamics driven by a (possibly time-varying) input.

    ``inflow_fn`` maps time to the node inflow; it is evaluated at the
    Runge-Kutta stage times, so it should be continuous.
    """
    flow_fns = list(flow_fns)
    is_exp = all(isinstance(ff, ExponentialFlow) for ff in flow_fns)
    if is_exp:
        a = np.array([ff.rate for ff in flow_fns])
        fm = np.array([ff.f_max for ff in flow_fns])
        mu = lambda rho: fm * -np.expm1(-a * rho)
    else:
        mu = lambda rho: np.array([ff.eval(r) for ff, r in zip(flow_fns, rho)])

    def deriv(t, rho):
        return inflow_fn(t) * np.asarray(route_fn(rho)) - mu(rho)

    times, states, undershoot, _ = _integrate(deriv, np.asarray(rho0, dtype=float),
                                              dt, horizon, ceiling)
    return LocalTrajectory(times, states, np.array([mu(s) for s in states]), undershoot)


@dataclass(frozen=True)
class TransferEstimate:
    """Tail-window verdict on whether the outflow clears alpha * inflow."""

    transferring: bool
    tail_min: float
    tail_variation: float
    inconclusive: bool


def alpha_transfer_estimate(traj: Trajectory, alpha: float, inflow: float | None = None,
                            tail_fraction: float = 0.2,
                            tol: float | None = None) -> TransferEstimate:
    """Approximate the asymptotic outflow bound by the tail-window minimum.

    The verdict compares the minimum outflow over the trailing
    ``tail_fraction`` of the horizon against ``alpha * inflow - tol``
    (default tol: 1e-3 * inflow).  A tail still varying by more than 5% of
    the inflow is flagged inconclusive rather than trusted.
    """
    if inflow is None:
        inflow = traj.inflow
    if tol is None:
        tol = 1e-3 * inflow
    tail = traj.outflow[traj.tail_slice(tail_fraction)]
    tail_min = float(tail.min())
    variation = float(tail.max() - tail.min())
    inconclusive = variation > 0.05 * inflow if inflow > 0 else False
    return TransferEstimate(
        transferring=bool(tail_min >= alpha * inflow - tol),
        tail_min=tail_min,
        tail_variation=variation,
        inconclusive=inconclusive,
    )


@dataclass
class LimitFlow:
    """Asymptotic flow, per link, with saturation flags.

    Saturation is a per-node event: a node whose input reaches its total
    outgoing capacity pins every one of its outgoing links at capacity.
    """

    flows: dict
    saturated: dict
    node_inflows: dict

    def flow_vector(self, topo) -> np.ndarray:
        return np.array([self.flows[lid] for lid in topo.link_ids])

    def saturated_links(self):
        return sorted(lid for lid, s in self.saturated.items() if s)


def local_limit_flow(flow_fns, route_fn, inflow: float, *, jac_fn=None,
                     tol: float = 1e-10, max_iter: int = 200):
    """Stationary split of a constant input over one node's outgoing links.

    Returns ``(flows, saturated)``.  At or above the node's total outgoing
    capacity every link saturates at its own capacity.  Below it, the zero
    of ``H(rho) = inflow * G(rho) - mu(rho)`` is found by a damped Newton
    iteration (projected onto nonnegative densities): H's Jacobian is
    strictly diagonally dominant with negative diagonal, hence invertible
    everywhere, which is also why plain damped Picard iteration is not
    used -- near saturation the flat flow function makes the Picard map
    expansive even though Newton stays well conditioned.  If Newton stalls,
    a homotopy walks the input up from smaller values, warm-starting each
    stage.  ``jac_fn`` supplies the routing Jacobian (entry [e, j] =
    dG_j/drho_e); central differences are used when it is omitted.
    """
    flow_fns = list(flow_fns)
    k = len(flow_fns)
    f_max = np.array([ff.f_max for ff in flow_fns])
    if inflow < 0:
        raise ValueError("inflow must be nonnegative")
    if inflow == 0:
        return np.zeros(k), False
    if inflow >= f_max.sum():
        return f_max.copy(), True
    if jac_fn is None:
        jac_fn = lambda rho: finite_difference_jacobian(route_fn, rho)

    def residual(lam, rho):
        return lam * np.asarray(route_fn(rho)) - _mu_vec(flow_fns, rho)

    def solve_at(lam, rho):
        r = residual(lam, rho)
        res = float(np.abs(r).max())
        for _ in range(max_iter):
            if res <= tol:
                return rho, res
            # standard Jacobian of H: rows = components, columns = densities
            jac = lam * jac_fn(rho).T - np.diag([ff.derivative(x) for ff, x in zip(flow_fns, rho)])
            step = np.linalg.solve(jac, -r)
            t = 1.0
            while t >= 1e-8:
                cand = np.maximum(rho + t * step, 0.0)
                r_cand = residual(lam, cand)
                res_cand = float(np.abs(r_cand).max())
                if res_cand < res:
                    rho, r, res = cand, r_cand, res_cand
                    break
                t *= 0.5
            else:
                return rho, res  # stalled; caller may retry via homotopy
        return rho, res

    rho, res = solve_at(inflow, np.zeros(k))
    if res > tol:
        rho = np.zeros(k)
        for frac in (0.0625, 0.125, 0.25, 0.5, 0.75, 0.875, 0.9375, 1.0):
            rho, res = solve_at(frac * inflow, rho)
        if res > tol:
            raise LocalSolverError(
                f"stationary split did not converge (best residual {res:.3e})", res
            )
    return _mu_vec(flow_fns, rho), False


def _mu_vec(flow_fns, rho):
    return np.array([ff.eval(r) for ff, r in zip(flow_fns, rho)])


def network_limit_flow(network: FlowNetwork, policy: RoutingPolicy, inflow: float) -> LimitFlow:
    """Cascade the local stationary splits through the acyclic node order."""
    topo = network.topology
    order = topological_order(topo)
    lam_star = {v: 0.0 for v in range(topo.num_nodes)}
    lam_star[topo.origin] = inflow
    flows = {}
    saturated = {}
    for v in order:
        out = topo.outgoing[v]
        if not out:
            continue
        fns = [network.flow_functions[lid] for lid in out]
        f_star, sat = local_limit_flow(
            fns,
            lambda rv, _v=v: policy.route(_v, rv),
            lam_star[v],
            jac_fn=lambda rv, _v=v: policy.jacobian(_v, rv),
        )
        for lid, fe in zip(out, f_star):
            flows[lid] = float(fe)
            saturated[lid] = bool(sat)
            lam_star[topo.link(lid).head] += float(fe)
    return LimitFlow(flows=flows, saturated=saturated, node_inflows=lam_star)


@dataclass
class ConvergenceReport:
    terminal_flows: np.ndarray
    limit_reference: np.ndarray
    max_pairwise_gap: float
    max_reference_gap: float
    passed: bool


def convergence_check(network: FlowNetwork, policy: RoutingPolicy, inflow: float,
                      n_initial: int = 10, config: SimulationConfig | None = None,
                      seed: int = 0, tol_limit: float = 1e-3) -> ConvergenceReport:
    """Simulate from random initial conditions and compare terminal flows.

    Initial densities are drawn log-uniformly over [1e-3, 1e2] times each
    link's median density, covering near-empty through heavily congested
    starts.  Saturated links are compared at their capacity value.
    """
    if n_initial < 2:
        raise ValueError("need at least two initial conditions to compare")
    topo = network.topology
    if config is None:
        config = SimulationConfig(inflow=inflow)
    elif config.inflow != inflow:
        config = replace(config, inflow=inflow)
    rng = np.random.default_rng(seed)
    medians = np.array([network.flow_functions[lid].median_density() for lid in topo.link_ids])
    reference = network_limit_flow(network, policy, inflow)
    ref_vec = reference.flow_vector(topo)
    terminals = []
    for _ in range(n_initial):
        rho0 = medians * 10.0 ** rng.uniform(-3, 2, size=len(medians))
        traj = simulate(network, policy, config, rho0)
        est, _ = limit_flow_estimate(traj, network, config.sat_threshold)
        terminals.append(est)
    terminals = np.array(terminals)
    pairwise = 0.0
    for i in range(n_initial):
        for j in range(i + 1, n_initial):
            pairwise = max(pairwise, float(np.abs(terminals[i] - terminals[j]).max()))
    ref_gap = float(np.abs(terminals - ref_vec).max())
    return ConvergenceReport(
        terminal_flows=terminals,
        limit_reference=ref_vec,
        max_pairwise_gap=pairwise,
        max_reference_gap=ref_gap,
        passed=pairwise <= tol_limit and ref_gap <= tol_limit,
    )


def detect_saturation(traj: Trajectory, network: FlowNetwork, policy: RoutingPolicy,
                      s_sat: float = 0.999) -> dict:
    """Flag links whose terminal flow sits above ``s_sat`` of capacity while
    the density is still rising (the finite-horizon observable of an
    unbounded density)."""
    drho = rhs(network, policy, traj.inflow, traj.rho[-1])
    flags = {}
    for i, lid in enumerate(traj.link_ids):
        fmax = network.flow_functions[lid].f_max
        flags[lid] = bool(traj.flows[-1, i] >= s_sat * fmax and drho[i] > -1e-12)
    return flags


def limit_flow_estimate(traj: Trajectory, network: FlowNetwork, s_sat: float = 0.999):
    """Terminal flows with saturated links reported at capacity.

    Returns ``(estimate, saturated_flags)``.  Unlike ``detect_saturation``
    this reads the flow level only, which is what the limit estimate needs.
    """
    est = traj.terminal_flow().copy()
    flags = {}
    for i, lid in enumerate(traj.link_ids):
        fmax = network.flow_functions[lid].f_max
        sat = traj.flows[-1, i] >= s_sat * fmax
        flags[lid] = bool(sat)
        if sat:
            est[i] = fmax
    return est, flags
