"""
Verification Workflow
Staged pipeline checking every hypothesis of the block for one scenario:
quantitative conditions, boundary classification, egress topology and
(optionally) sampled forward invariance.
"""

import logging
import time
from typing import List, Optional, Tuple, TypedDict

from app.core.errors import OrbitMateError
from app.schemas.report import ConditionReport, TopologyReport, VerificationBundle
from app.services.scenario_service import ScenarioRuntime
from app.services.wazewski_validator import (
    BoundaryClassification,
    check_egress_fibres,
    check_forward_invariance,
    check_friction,
    check_magnetic_bound,
    check_tangency_lemma,
    certify_rotation_bound,
    classify_boundary,
    egress_topology,
    find_energy_cap,
    required_friction,
)

logger = logging.getLogger(__name__)


class VerificationState(TypedDict):
    """State passed between agents in the workflow"""
    runtime: ScenarioRuntime
    resolution: int
    reports: List[ConditionReport]
    classification: Optional[BoundaryClassification]
    topology: Optional[TopologyReport]
    errors: List[str]
    processing_stage: str


class HypothesisAgent:
    """Quantitative conditions: magnetic bound and friction threshold, or energy cap and tangency lemma"""

    def check(self, state: VerificationState) -> VerificationState:
        state["processing_stage"] = "hypotheses"
        runtime = state["runtime"]
        system, c = runtime.system, runtime.energy_cap
        try:
            if system.kind == "pendulum":
                state["reports"].append(check_magnetic_bound(runtime.forcing, c, system.params))
                state["reports"].append(check_friction(runtime.forcing, c, system.params))
            else:
                self._surface(state, runtime)
            b = runtime.config.rotation_bound
            state["reports"].append(check_tangency_lemma(system, b, c, state["resolution"]))
        except OrbitMateError as e:
            state["errors"].append(f"HypothesisAgent failed: {e.message}")
            logger.error(f"❌ HypothesisAgent: {e.message}")
        return state

    def _surface(self, state: VerificationState, runtime: ScenarioRuntime):
        system, c = runtime.system, runtime.energy_cap
        energy = runtime.energy or find_energy_cap(system, runtime.config.rotation_bound, state["resolution"])
        state["reports"].append(energy.as_condition())
        needed = required_friction(system, c, runtime.config.rotation_bound, state["resolution"])
        state["reports"].append(ConditionReport(
            name="surface_friction",
            satisfied=bool(system.params.mu > needed),
            margin=float(system.params.mu - needed),
            details={"mu": system.params.mu, "required": needed, "energy_cap": c},
        ))
        if runtime.config.verification.certify_rotation:
            cert = certify_rotation_bound(system.surface, system.params, state["resolution"])
            sup_omega = system.frame.omega_signal.sup_norm()
            sup_omega_dot = system.frame.omega_signal.derivative_signal().sup_norm()
            worst = max(sup_omega, sup_omega_dot)
            state["reports"].append(ConditionReport(
                name="rotation_bound",
                satisfied=bool(cert.certified and worst < cert.rotation_bound),
                margin=float(cert.rotation_bound - worst),
                details={"certified_b": cert.rotation_bound, "certified_c": cert.energy_cap,
                         "sup_omega": sup_omega, "sup_omega_dot": sup_omega_dot, "checks": cert.evaluations},
            ))


class BoundaryAgent:
    """Sampled classification of the block boundary"""

    def classify(self, state: VerificationState) -> VerificationState:
        state["processing_stage"] = "boundary"
        try:
            classification = classify_boundary(state["runtime"].block, state["resolution"])
            state["classification"] = classification
            summary = classification.summary
            state["reports"].append(ConditionReport(
                name="boundary_classification",
                satisfied=summary.violations == 0,
                margin=float(-summary.violations),
                resolution=summary.resolution,
                details={"total": summary.total, "egress_samples": summary.egress_samples,
                         "analytic_match_rate": summary.analytic_match_rate},
            ))
            logger.info(f"✅ BoundaryAgent: {summary.total} samples, {summary.violations} violations")
        except OrbitMateError as e:
            state["errors"].append(f"BoundaryAgent failed: {e.message}")
            logger.error(f"❌ BoundaryAgent: {e.message}")
        return state


class TopologyAgent:
    """Egress fibres and the Euler characteristic count"""

    def count(self, state: VerificationState) -> VerificationState:
        state["processing_stage"] = "topology"
        block = state["runtime"].block
        try:
            fibres = check_egress_fibres(block, state["resolution"])
            state["reports"].append(fibres)
            if state["classification"] is None:
                raise OrbitMateError("no boundary classification to build on")
            topology = egress_topology(block, state["classification"], fibres)
            state["topology"] = topology
            state["reports"].append(ConditionReport(
                name="egress_topology", satisfied=True, margin=float(topology.difference),
                details=topology.model_dump(),
            ))
        except OrbitMateError as e:
            state["errors"].append(f"TopologyAgent failed: {e.message}")
            state["reports"].append(ConditionReport(
                name="egress_topology", satisfied=False, margin=0.0, details={"error": e.message},
            ))
            logger.error(f"❌ TopologyAgent: {e.message}")
        return state


class InvarianceAgent:
    """Random starts inside the block never leave through the energy face"""

    def simulate(self, state: VerificationState) -> VerificationState:
        state["processing_stage"] = "forward_invariance"
        runtime = state["runtime"]
        verification = runtime.config.verification
        try:
            state["reports"].append(check_forward_invariance(
                runtime.block, verification.forward_starts, verification.forward_periods,
                runtime.config.seed, runtime.integrator,
            ))
        except OrbitMateError as e:
            state["errors"].append(f"InvarianceAgent failed: {e.message}")
        return state


class VerificationWorkflow:
    """Runs the agents in order and reduces their reports into one bundle"""

    def __init__(self, forward_invariance: bool = False):
        self.hypotheses = HypothesisAgent()
        self.boundary = BoundaryAgent()
        self.topology = TopologyAgent()
        self.invariance = InvarianceAgent() if forward_invariance else None

    def run(self, runtime: ScenarioRuntime, resolution: Optional[int] = None
            ) -> Tuple[VerificationBundle, Optional[BoundaryClassification]]:
        started = time.perf_counter()
        state: VerificationState = {
            "runtime": runtime,
            "resolution": resolution or runtime.config.verification.resolution,
            "reports": [],
            "classification": None,
            "topology": None,
            "errors": [],
            "processing_stage": "initialized",
        }
        logger.info(f"🔍 Verifying scenario {runtime.config.name} ({runtime.system.kind})")
        state = self.hypotheses.check(state)
        state = self.boundary.classify(state)
        state = self.topology.count(state)
        if self.invariance is not None:
            state = self.invariance.simulate(state)
        state["processing_stage"] = "completed"

        bundle = VerificationBundle(
            scenario=runtime.config.name,
            system=runtime.system.kind,
            all_satisfied=all(r.satisfied for r in state["reports"]) and not state["errors"],
            reports=state["reports"],
            classification=state["classification"].summary if state["classification"] else None,
            topology=state["topology"],
            errors=state["errors"],
            header=runtime.header(),
        )
        logger.info(
            f"Verification of {runtime.config.name} finished: all satisfied = {bundle.all_satisfied} "
            f"({time.perf_counter() - started:.2f}s)"
        )
        return bundle, state["classification"]


def verify_scenario(runtime: ScenarioRuntime, resolution: Optional[int] = None,
                    forward_invariance: bool = False) -> VerificationBundle:
    return VerificationWorkflow(forward_invariance).run(runtime, resolution)[0]
