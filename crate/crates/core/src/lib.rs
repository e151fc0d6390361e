//! Query-by-example synthesis of compositional video events over
//! spatio-temporal scene graphs.

pub mod datagen;
pub mod dsl;
pub mod executor;
pub mod oracle;
pub mod predicates;
pub mod scene;
pub mod synth;

pub use dsl::{canonical, complexity, parse, Alpha, DslError, PredicateAtom, Query, RegionGraphSpec, SearchConfig, Var};
pub use executor::{emit_sql, match_query, match_reference, CompiledQuery, ExecError, Executor, PrefixCache, TelemetrySnapshot};
pub use oracle::{GroundTruthOracle, InteractiveOracle, Label, LabelBridge, LabelOracle, NoiseSpec, NoisyOracle, OracleError};
pub use predicates::PredicateRegistry;
pub use scene::{BBox, DatasetFormat, EventMatch, Fid, FrameRecord, Oid, Segment, SegmentBuilder, SegmentRecord, SegmentStore, TrackRecord};
pub use synth::{
    synthesize, CandidateState, Hyperparams, LabeledPool, Selection, Synthesis, SynthesisError, SynthesisResult,
};
