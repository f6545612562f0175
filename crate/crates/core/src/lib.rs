//! Cost-aware routing between a small local model and an expensive remote
//! model.
//!
//! Each local prediction is scored by a supervisor ([`supervision`]); trusted
//! predictions are answered locally and the rest are forwarded
//! ([`routing`]). [`evaluation`] replays labeled traces to measure system
//! accuracy against the share of requests sent to the remote model.

pub mod cost;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod local;
pub mod routing;
pub mod supervision;
pub mod synthetic;
pub mod trace;

pub use cost::{CostLedger, SharedLedger, token_cost};
pub use error::{Error, Result};
pub use evaluation::{
    CurvePoint, EvalOptions, EvaluationReport, ReportFormat, SystemOutcome, emit_report,
    sweep_curve, system_accuracy,
};
pub use local::{LocalModel, load_weights, predict_local};
pub use routing::{
    AdaptationState, Calibration, Route, RoutingDecision, RoutingPolicy, adapt,
    calibrate_threshold, decide,
};
pub use supervision::{
    ActivationVector, ClassId, MdsaModel, ProbabilityVector, Supervisor, SupervisorKind,
    TrustScore, fit_mdsa, mdsa_distance, softmax_confidence, trust_score,
};
pub use trace::{PredictionRecord, TraceMode, load_trace, read_trace, write_trace};
