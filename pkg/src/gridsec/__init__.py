"""Power-grid EMS security workbench.

State estimation with chi-square bad-data detection, stealth and
false-data-injection attack synthesis, a physics-rule anomaly detector
over a 71-dimensional feature space, and a Set-of-Mark constraint solver
for HMI display segments, all on the IEEE 14-bus system.
"""

from .network import (
    Branch,
    BreakerState,
    Bus,
    BusKind,
    NetworkModel,
    TopologyMatrix,
    admittance,
    apply_topology_corruption,
    build_ieee14,
    build_topology,
)
from .powerflow import PowerFlowSolution, decompose_islands, line_flows, solve
from .estimation import (
    MeasKind,
    Measurement,
    MeasurementSet,
    bdd_classify,
    build_dc_jacobian,
    chi_square_statistic,
    chi_square_threshold,
    iterative_bad_data_removal,
    wls_estimate_ac,
    wls_estimate_dc,
)
from .stats import PAPER_CHI2_THRESHOLD
from .attacks import (
    AttackVector,
    StateDelta,
    StealthRange,
    build_scenario_1a,
    build_scenario_1b,
    corrupt_topology_record,
    manipulate_state_vector,
    stealth_from_state_delta,
    sweep_stealth_range,
)
from .detection import (
    FeatureBaseline,
    Finding,
    Rule,
    RuleConfig,
    Severity,
    VerdictClass,
    classify,
    extract_features,
    feature_chi_square,
    fit_baseline,
    rule_battery,
)
from .records import BranchRow, BusRow, BusSnapshot, GridRecord
from .scenarios import TABLE5_SCENARIOS, generate_all, generate_scenario
from .som import (
    AdjacencyConstraint,
    GridArrangement,
    SegmentDescriptor,
    diff_against_reference,
    generate_constraints,
    parse_segments,
    solve_arrangement,
    verify_arrangement,
)
from .pipeline import run_pipeline

__version__ = "0.1.0"
