"""trajlink: whole-person trajectories from distributed, non-overlapping 3D sensors.

Per-sensor point-cloud streams become sub-trajectories (background
subtraction, clustering, Kalman tracking); sub-trajectories across sensors
are linked by maximizing the product of appearance similarity (P1),
gate-transition statistics (P2), and travel-time densities (P3) with an
exact assignment solver. A synthetic scene simulator stands in for physical
sensors.
"""

from .assignment import lexicographic_optimal_assignment, min_cost_assignment
from .config import (
    MatcherConfig,
    PipelineConfig,
    SegmentationConfig,
    SpatioTemporalConfig,
    config_from_dict,
    load_config,
)
from .embedding import (
    EmbeddingNet,
    TrainConfig,
    TrainResult,
    aggregate_embedding,
    aggregate_height,
    embed,
    embed_batch,
    height_similarity,
    load_model,
    p1_height,
    p1_similarity,
    save_model,
    train,
    triplet_loss,
)
from .evaluation import EvalReport, auc_score, evaluate, label_subtrajectories, truth_pairs
from .features import GmmGrid, fisher_vector, normalize_to_body_box, responsibilities
from .geometry import (
    BackgroundModel,
    Frame,
    HumanSegment,
    build_background,
    segment_humans,
    subtract_background,
    voxel_downsample,
)
from .matching import (
    AffinityGraph,
    MatchResult,
    ModelBundle,
    OnlineMatcher,
    affinity,
    build_graph,
    match_trajectories,
    solve_matching,
)
from .experiments import (
    EXPERIMENTS,
    PipelineOutput,
    extract_from_frames,
    learn_models,
    match_all,
    run_experiment,
    run_pipeline,
    train_p1_model,
    uniform_models,
)
from .simulator import (
    BodyModel,
    MapSpec,
    ScenarioSpec,
    SensorSpec,
    body_for_person,
    calibration_scenario,
    corridor_map,
    corridor_traffic,
    scenario_1a,
    simulate,
    simulate_stream,
    square_route_map,
)
from .spatiotemporal import (
    UNKNOWN,
    Gate,
    GateEvent,
    PairTimeState,
    TransitionMatrix,
    TravelTimeModel,
    detect_high_confidence,
    p2_spatial,
    p3_temporal,
    travel_time_logpdf,
    travel_time_mode,
    update_spatial,
    update_temporal,
)
from .tracker import SensorTracker, SubTrajectory, TrackerConfig, temporal_precedes

__version__ = "0.1.0"
