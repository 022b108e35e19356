"""Scenario documents: one JSON file describing a whole experiment.

A scenario carries the topology, per-link flow-function parameters,
per-node routing parameters, the origin inflow, and optionally a
perturbation section and simulation overrides.  Explicit link ids keep
parallel links unambiguous.

Example::

    {
      "name": "two-route",
      "nodes": 2,
      "links": [{"id": 0, "tail": 0, "head": 1},
                {"id": 1, "tail": 0, "head": 1}],
      "flow_functions": {"0": {"family": "exp", "a": 1.0, "f_max": 0.75},
                         "1": {"family": "exp", "a": 1.0, "f_max": 0.75}},
      "policies": {"0": {"eta": 1.0, "weights": {"0": 0.6, "1": 6.0}}},
      "inflow": 1.0,
      "perturbation": {"cut_attack": {"alpha": 0.25}},
      "seed": 0
    }

A per-link perturbation instead looks like
``{"links": {"0": {"type": "scale", "eps": 0.5}}}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .flows import ExponentialFlow, FlowNetwork, InadmissiblePerturbation, PerturbationSpec
from .resilience import cut_attack
from .routing import LogitPolicy
from .topology import NetworkTopology, TopologyError, validate_topology

__all__ = ["Scenario", "ScenarioError", "load_scenario", "parse_scenario", "validate_scenario"]


class ScenarioError(ValueError):
    """Malformed scenario document; the message carries field context."""


@dataclass
class Scenario:
    name: str
    topology: NetworkTopology
    network: FlowNetwork
    policy: LogitPolicy
    inflow: float
    seed: int = 0
    simulation: dict = field(default_factory=dict)
    perturbation: dict | None = None

    def perturbation_spec(self) -> PerturbationSpec | None:
        """Materialize the perturbation section, if any."""
        if not self.perturbation:
            return None
        if "cut_attack" in self.perturbation:
            params = self.perturbation["cut_attack"]
            return cut_attack(self.network, float(params["alpha"]), self.inflow)
        factors = {}
        for key, body in self.perturbation["links"].items():
            if body.get("type", "scale") != "scale":
                raise ScenarioError(f"perturbation.links.{key}: unknown type {body.get('type')!r}")
            factors[int(key)] = float(body["eps"])
        return PerturbationSpec.scaling(self.network, factors)

    def attack_alpha(self) -> float | None:
        if self.perturbation and "cut_attack" in self.perturbation:
            return float(self.perturbation["cut_attack"]["alpha"])
        return None


def _need(doc: dict, key: str, where: str):
    if key not in doc:
        raise ScenarioError(f"{where}: missing required field {key!r}")
    return doc[key]


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    """Build a Scenario from a decoded JSON object, checking cross-references."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    name = str(doc.get("name", name))
    nodes = int(_need(doc, "nodes", "scenario"))
    raw_links = _need(doc, "links", "scenario")
    try:
        topo = NetworkTopology.from_dict({"nodes": nodes, "links": raw_links})
    except (TopologyError, KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"links: {exc}") from exc

    ff_doc = _need(doc, "flow_functions", "scenario")
    fns = {}
    for lid in topo.link_ids:
        body = ff_doc.get(str(lid))
        if body is None:
            raise ScenarioError(f"flow_functions: missing entry for link {lid}")
        family = body.get("family", "exp")
        if family != "exp":
            raise ScenarioError(f"flow_functions.{lid}: unknown family {family!r}")
        try:
            fns[lid] = ExponentialFlow(float(body["a"]), float(body["f_max"]))
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"flow_functions.{lid}: {exc}") from exc
    stray = set(ff_doc) - {str(lid) for lid in topo.link_ids}
    if stray:
        raise ScenarioError(f"flow_functions: entries for unknown links {sorted(stray)}")
    network = FlowNetwork(topo, fns)

    pol_doc = _need(doc, "policies", "scenario")
    eta, weights = {}, {}
    for v in range(topo.num_nodes):
        out = topo.outgoing[v]
        if not out:
            continue
        body = pol_doc.get(str(v))
        if body is None:
            raise ScenarioError(f"policies: missing entry for non-destination node {v}")
        try:
            eta[v] = float(body["eta"])
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"policies.{v}: {exc}") from exc
        w = body.get("weights", {})
        for lid in out:
            if str(lid) not in w:
                raise ScenarioError(f"policies.{v}: missing weight for outgoing link {lid}")
            weights[lid] = float(w[str(lid)])
    try:
        policy = LogitPolicy(topo, eta, weights)
    except ValueError as exc:
        raise ScenarioError(f"policies: {exc}") from exc

    inflow = float(_need(doc, "inflow", "scenario"))
    if inflow < 0:
        raise ScenarioError("inflow: must be nonnegative")

    pert = doc.get("perturbation")
    if pert is not None:
        if not isinstance(pert, dict) or not ({"links", "cut_attack"} & set(pert)):
            raise ScenarioError("perturbation: expected a 'links' map or a 'cut_attack' section")
        if "links" in pert:
            stray = set(pert["links"]) - {str(lid) for lid in topo.link_ids}
            if stray:
                raise ScenarioError(f"perturbation.links: unknown links {sorted(stray)}")

    return Scenario(
        name=name,
        topology=topo,
        network=network,
        policy=policy,
        inflow=inflow,
        seed=int(doc.get("seed", 0)),
        simulation=dict(doc.get("simulation", {})),
        perturbation=pert,
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc, name=str(path))


def validate_scenario(scenario: Scenario, n_policy_samples: int = 300) -> dict:
    """Full semantic validation: topology, flow certification, policy properties.

    Returns a machine-readable report; ``ok`` is the overall verdict.
    """
    from .routing import check_property_a, check_property_b

    findings = []
    topo_result = validate_topology(scenario.topology)
    for msg in topo_result.violations:
        findings.append({"component": "topology", "message": msg})

    for lid in scenario.topology.link_ids:
        for msg in scenario.network.flow_functions[lid].certify():
            findings.append({"component": f"flow_function[{lid}]", "message": msg})

    if topo_result.ok:
        for v in range(scenario.topology.num_nodes):
            out = scenario.topology.outgoing[v]
            if not out:
                continue
            rep = check_property_a(scenario.policy, v, n_samples=n_policy_samples, rng=scenario.seed)
            if not rep.passed:
                findings.append({
                    "component": f"policy[{v}]",
                    "message": "cross-partial property (a) violated: inflow share may rise "
                               f"with congestion (min cross-partial {rep.detail['min_cross_partial']:.3e})",
                })
            if len(out) >= 2:
                rep_b = check_property_b(scenario.policy, v, subset=out[:1])
                if not rep_b.passed:
                    findings.append({
                        "component": f"policy[{v}]",
                        "message": "limit property (b) violated: congested links keep "
                                   f"{rep_b.detail['off_subset_mass']:.3e} of the split",
                    })
        if scenario.perturbation is not None:
            try:
                scenario.perturbation_spec()
            except (InadmissiblePerturbation, ScenarioError, ValueError) as exc:
                findings.append({"component": "perturbation", "message": str(exc)})

    return {"ok": not findings, "scenario": scenario.name, "findings": findings}
