"""Integration, limit flows, transfer estimation, and the cooperative-system laws."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from flownet import (
    ExponentialFlow,
    FlowNetwork,
    LogitPolicy,
    NetworkTopology,
    PerturbationSpec,
    SimulationConfig,
    SimulationError,
    alpha_transfer_estimate,
    convergence_check,
    local_limit_flow,
    network_limit_flow,
    rhs,
    simulate,
    simulate_local,
)
from flownet.dynamics import limit_flow_estimate, detect_saturation

from conftest import (
    diamond_network,
    diamond_policy,
    two_route_limit_flow,
    two_route_network,
    two_route_policy,
)


def two_route_fixed_point_oracle(lam: float) -> np.ndarray:
    """Independent stationary split for the two-route fixture.

    Scalar root solve of lam * G_1(mu^-1(f1), mu^-1(lam - f1)) = f1; no
    closed form, no solver code shared with the package's Newton cascade.
    """
    assert 0 < lam < 1.5
    a = np.array([0.6, 6.0])

    def residual(f1):
        f = np.array([f1, lam - f1])
        rho = -np.log1p(-f / 0.75)
        w = a * np.exp(-rho)
        return lam * w[0] / w.sum() - f1

    lo = max(1e-12, lam - 0.75 + 1e-12)
    hi = min(lam, 0.75) - 1e-12
    f1 = brentq(residual, lo, hi, xtol=1e-14)
    return np.array([f1, lam - f1])


class TestRhs:
    def test_two_route_origin_at_rest(self, two_route):
        topo, net, policy = two_route
        np.testing.assert_allclose(rhs(net, policy, 1.0, [0.0, 0.0]), [1 / 11, 10 / 11], atol=1e-15)

    def test_drain_without_inflow(self):
        topo = NetworkTopology(2, [(0, 0, 1)])
        net = FlowNetwork(topo, {0: ExponentialFlow(1.0, 1.0)})
        policy = LogitPolicy(topo, eta={0: 1.0}, weights={0: 1.0})
        out = rhs(net, policy, 0.0, [2.0])
        assert out[0] == pytest.approx(-(1.0 - math.exp(-2.0)), abs=1e-15)
        assert out[0] < 0

    def test_matched_equilibrium_is_stationary(self):
        # admissible equilibrium flow on the diamond, policy weights chosen
        # so the split reproduces it exactly
        net = diamond_network()
        topo = net.topology
        f_eq = {0: 0.4, 1: 0.6, 2: 0.15, 3: 0.25, 4: 0.75, 5: 1.0}
        rho_eq = np.array([net.flow_functions[lid].inverse(f_eq[lid]) for lid in topo.link_ids])
        weights = {lid: f_eq[lid] * math.exp(rho_eq[i]) for i, lid in enumerate(topo.link_ids)}
        policy = LogitPolicy(topo, eta={v: 1.0 for v in range(4)}, weights=weights)
        np.testing.assert_allclose(rhs(net, policy, 1.0, rho_eq), 0.0, atol=1e-14)


class TestSimulate:
    def test_equilibrium_stays_put(self, two_route):
        topo, net, policy = two_route
        f_star = two_route_fixed_point_oracle(1.0)
        rho_star = np.array([net.flow_functions[i].inverse(f_star[i]) for i in (0, 1)])
        traj = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=20.0), rho_star)
        assert np.abs(traj.rho - rho_star).max() < 1e-9

    def test_terminal_flow_matches_oracle(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=200.0))
        oracle = two_route_fixed_point_oracle(1.0)
        np.testing.assert_allclose(traj.terminal_flow(), oracle, atol=1e-4)
        # and the conftest closed form agrees with the numeric oracle
        np.testing.assert_allclose(two_route_limit_flow(1.0), oracle, atol=1e-12)

    def test_halving_dt_barely_moves_terminal_state(self, two_route):
        topo, net, policy = two_route
        t1 = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=40.0, dt=0.02))
        t2 = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=40.0, dt=0.01))
        assert np.abs(t1.rho[-1] - t2.rho[-1]).max() < 1e-6

    def test_zero_inflow_drains(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=0.0, horizon=60.0),
                        np.array([2.0, 3.0]))
        assert np.abs(traj.terminal_flow()).max() < 1e-6
        assert traj.max_undershoot <= 1e-9

    def test_flows_and_inflows_consistent(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=0.8, horizon=30.0))
        expect = 0.75 * -np.expm1(-traj.rho)
        np.testing.assert_allclose(traj.flows, expect, atol=1e-14)
        np.testing.assert_allclose(traj.node_inflows[:, 1], traj.flows.sum(axis=1), atol=1e-14)
        np.testing.assert_allclose(traj.node_inflows[:, 0], 0.8, atol=0)

    def test_runaway_density_reported(self, two_route):
        # the right-hand side is globally bounded, so the blow-up detector in
        # practice is the density ceiling: an overloaded network grows without
        # bound and must abort with a diagnostic instead of running forever
        topo, net, policy = two_route
        with pytest.raises(SimulationError):
            simulate(net, policy,
                     SimulationConfig(inflow=2.0, horizon=500.0, dt=0.05, density_ceiling=50.0))

    def test_record_stride_keeps_endpoints(self, two_route):
        topo, net, policy = two_route
        full = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=10.0, dt=0.01))
        thin = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=10.0, dt=0.01,
                                                      record_stride=50))
        assert thin.times[0] == 0.0 and thin.times[-1] == full.times[-1]
        np.testing.assert_allclose(thin.rho[-1], full.rho[-1], atol=0)


class TestAlphaTransfer:
    def test_unperturbed_fully_transferring(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=200.0))
        est = alpha_transfer_estimate(traj, 1.0)
        assert est.transferring and not est.inconclusive

    def test_strangled_origin_not_transferring(self, two_route):
        topo, net, policy = two_route
        spec = PerturbationSpec.scaling(net, {0: 0.01, 1: 0.01})
        traj = simulate(net.perturbed(spec), policy, SimulationConfig(inflow=1.0, horizon=200.0, dt=0.02))
        est = alpha_transfer_estimate(traj, 0.5)
        assert not est.transferring
        assert est.tail_min <= 0.015 + 1e-6  # at most the scaled total capacity

    def test_alpha_zero_always_transfers(self, two_route):
        topo, net, policy = two_route
        spec = PerturbationSpec.scaling(net, {0: 0.01, 1: 0.01})
        traj = simulate(net.perturbed(spec), policy, SimulationConfig(inflow=1.0, horizon=120.0, dt=0.02))
        assert alpha_transfer_estimate(traj, 0.0).transferring

    def test_short_horizon_flagged_inconclusive(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=2.0))
        assert alpha_transfer_estimate(traj, 1.0).inconclusive


class TestLocalLimitFlow:
    def test_zero_inflow(self, two_route):
        topo, net, policy = two_route
        f, sat = local_limit_flow([net.flow_functions[0], net.flow_functions[1]],
                                  lambda r: policy.route(0, r), 0.0)
        assert not sat
        np.testing.assert_array_equal(f, [0.0, 0.0])

    def test_interior_fixed_point_matches_scalar_oracle(self, two_route):
        topo, net, policy = two_route
        for lam in (0.25, 0.7, 1.0, 1.45):
            f, sat = local_limit_flow([net.flow_functions[0], net.flow_functions[1]],
                                      lambda r: policy.route(0, r), lam,
                                      jac_fn=lambda r: policy.jacobian(0, r))
            assert not sat
            np.testing.assert_allclose(f, two_route_fixed_point_oracle(lam), atol=1e-9)
            assert f.sum() == pytest.approx(lam, abs=1e-9)  # conservation

    def test_saturation_at_and_above_total_capacity(self, two_route):
        topo, net, policy = two_route
        for lam in (1.5, 2.0):
            f, sat = local_limit_flow([net.flow_functions[0], net.flow_functions[1]],
                                      lambda r: policy.route(0, r), lam)
            assert sat
            np.testing.assert_array_equal(f, [0.75, 0.75])

    def test_continuity_and_conservation_sweep(self, two_route):
        topo, net, policy = two_route
        fns = [net.flow_functions[0], net.flow_functions[1]]
        grid = np.linspace(0.0, 1.5 * 1.5, 121)
        prev = None
        step = grid[1] - grid[0]
        for lam in grid:
            f, _ = local_limit_flow(fns, lambda r: policy.route(0, r), float(lam),
                                    jac_fn=lambda r: policy.jacobian(0, r))
            assert f.sum() == pytest.approx(min(lam, 1.5), abs=1e-8)
            if prev is not None:
                assert np.abs(f - prev).max() < 12.0 * step  # continuity, O(grid step)
            prev = f


class TestNetworkLimitFlow:
    def test_zero_inflow_everywhere_zero(self):
        net = diamond_network()
        lf = network_limit_flow(net, diamond_policy(net.topology), 0.0)
        assert all(v == 0.0 for v in lf.flows.values())

    def test_two_route_values(self, two_route):
        topo, net, policy = two_route
        lf = network_limit_flow(net, policy, 1.0)
        np.testing.assert_allclose(lf.flow_vector(topo), two_route_fixed_point_oracle(1.0),
                                   atol=1e-9)
        assert lf.saturated_links() == []

    def test_chain_saturating_middle_pins_its_links(self, chain):
        topo, net, policy = chain
        lf = network_limit_flow(net, policy, 1.5)
        assert lf.flows[0] == pytest.approx(1.5, abs=1e-9)   # below its 2.0 capacity
        assert lf.flows[1] == 1.0 and lf.saturated[1]        # middle node saturated
        assert not lf.saturated[0]
        assert lf.node_inflows[2] == pytest.approx(1.0)

    def test_matches_simulation_on_diamond(self, diamond):
        topo, net, policy = diamond
        lf = network_limit_flow(net, policy, 1.0)
        traj = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=150.0, dt=0.02))
        np.testing.assert_allclose(traj.terminal_flow(), lf.flow_vector(topo), atol=1e-6)

    def test_unsaturated_conservation_at_every_node(self, diamond):
        topo, net, policy = diamond
        lf = network_limit_flow(net, policy, 1.2)
        assert not lf.saturated_links()
        for v in range(topo.num_nodes):
            out = topo.outgoing[v]
            if out:
                assert sum(lf.flows[lid] for lid in out) == pytest.approx(
                    lf.node_inflows[v], abs=1e-9)


class TestConvergence:
    def test_two_route_ten_starts(self, two_route):
        topo, net, policy = two_route
        report = convergence_check(net, policy, 1.0, n_initial=10,
                                   config=SimulationConfig(inflow=1.0, horizon=250.0, dt=0.02),
                                   seed=1, tol_limit=1e-3)
        assert report.passed
        np.testing.assert_allclose(report.limit_reference, two_route_fixed_point_oracle(1.0),
                                   atol=1e-9)

    def test_zero_inflow_all_drain(self, two_route):
        topo, net, policy = two_route
        report = convergence_check(net, policy, 0.0, n_initial=3,
                                   config=SimulationConfig(inflow=0.0, horizon=300.0, dt=0.02),
                                   seed=2, tol_limit=1e-3)
        assert report.passed
        assert np.abs(report.terminal_flows).max() < 1e-3


class TestLocalSystemLaws:
    def _node_fixture(self):
        net = two_route_network()
        policy = two_route_policy(net.topology)
        fns = [net.flow_functions[0], net.flow_functions[1]]
        return fns, (lambda r: policy.route(0, r))

    def test_monotone_in_the_input_signal(self):
        fns, route = self._node_fixture()
        lam_lo = lambda t: 0.5
        lam_hi = lambda t: 0.5 + 0.3 * (1.0 + math.sin(t)) / 2.0
        rho0 = np.array([0.2, 0.2])
        lo = simulate_local(fns, route, lam_lo, rho0, dt=0.01, horizon=40.0)
        hi = simulate_local(fns, route, lam_hi, rho0, dt=0.01, horizon=40.0)
        assert np.all(lo.rho <= hi.rho + 1e-9)

    def test_attractivity_under_convergent_input(self):
        fns, route = self._node_fixture()
        lam = 0.8
        decaying = lambda t: lam + 0.5 * math.exp(-t)
        traj = simulate_local(fns, route, decaying, np.array([1.0, 0.1]), dt=0.01, horizon=100.0)
        target = two_route_fixed_point_oracle(lam)
        np.testing.assert_allclose(traj.flows[-1], target, atol=1e-4)


class TestIntegratorOrder:
    def test_error_shrinks_sixteen_fold(self, two_route):
        topo, net, policy = two_route
        def terminal(dt):
            return simulate(net, policy, SimulationConfig(inflow=1.0, horizon=4.0, dt=dt)).rho[-1]
        reference = terminal(0.2 / 128.0)
        err_coarse = np.abs(terminal(0.2) - reference).max()
        err_fine = np.abs(terminal(0.1) - reference).max()
        assert err_coarse / err_fine >= 12.0


class TestSimulationConfig:
    def test_field_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig(inflow=-1.0)
        with pytest.raises(ValueError):
            SimulationConfig(inflow=1.0, dt=0.0)
        with pytest.raises(ValueError):
            SimulationConfig(inflow=1.0, horizon=-5.0)
        with pytest.raises(ValueError):
            SimulationConfig(inflow=1.0, tail_fraction=1.0)
        with pytest.raises(ValueError):
            SimulationConfig(inflow=1.0, sat_threshold=1.0)
        with pytest.raises(ValueError):
            SimulationConfig(inflow=1.0, record_stride=0)

    def test_default_dt_follows_fastest_link(self, two_route):
        from flownet.dynamics import default_dt
        topo, net, policy = two_route
        assert default_dt(net) == pytest.approx(0.01 / 0.75)


class TestSaturationDetection:
    def test_overloaded_two_route_flags_both(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=2.0, horizon=120.0))
        est, flags = limit_flow_estimate(traj, net)
        assert flags == {0: True, 1: True}
        np.testing.assert_array_equal(est, [0.75, 0.75])
        assert detect_saturation(traj, net, policy) == {0: True, 1: True}

    def test_below_capacity_no_flags(self, two_route):
        topo, net, policy = two_route
        traj = simulate(net, policy, SimulationConfig(inflow=1.0, horizon=150.0))
        est, flags = limit_flow_estimate(traj, net)
        assert flags == {0: False, 1: False}
