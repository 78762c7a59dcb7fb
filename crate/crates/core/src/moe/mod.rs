//! Sparse mixture-of-experts layer: gate, noisy Top-K dispatch under a
//! capacity limit, intra-group and fill-in rectification, experts, and the
//! straight-through combine.

mod combine;
mod config;
mod dispatch;
mod experts;
mod gate;
mod layer;
mod noise;
mod trace;
mod utilization;

pub use combine::{combine, combine_in_graph, combine_weights, Denominator};
pub use config::{
    capacity, GateConfig, GateInput, DEFAULT_CAPACITY_FACTOR, DEFAULT_EXPERTS, DEFAULT_NOISE_SCALE, DEFAULT_TOP_K,
};
pub use dispatch::{
    fill_in_rectify, hard_plan, intra_group_rectify, rank_experts, route, topk_dispatch, Dropped, FrFill,
    IrReroute, Participant, Routed, RoutingPlan, SlotEntry, SlotSource,
};
pub use experts::{Expert, ExpertStack, ExpertVars, DEFAULT_HIDDEN, N_CLASSES};
pub use gate::{gate_forward, GateParams, GateScores, GateVars};
pub use layer::{hard_gate_route, hard_gate_route_name, Frozen, Inference, MoeForward, MoeLayer, MoeVars, RouteInput, Routing};
pub use noise::{add_gumbel_noise, gumbel, gumbel_noise};
pub use trace::{RoutingTrace, TraceRow};
pub use utilization::{hard_utilization, normalize_counts, soft_utilization, UtilizationMode, UtilizationVector};
