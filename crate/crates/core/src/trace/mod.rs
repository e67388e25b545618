//! Domain data model and the trace/dataset file formats.

mod dataset;
mod io;
mod model;
pub mod synth;

pub use dataset::{load_dataset, write_dataset_csv, REFERENCE_DELIMITER};
pub use io::{load_manifest, load_trace, write_trace, MANIFEST_FILE, RECORDS_FILE};
pub use model::{
    ContextSnippet, ExperimentManifest, NliLabel, Question, RecordKey, RoundRecord, ScorerChannels,
    SentenceChannels, Trace, Track, ATTENTION_SUM_TOLERANCE, DEFAULT_EPSILON_PAD,
};
pub use synth::{synth_trace, SynthConfig, SynthOutput, TrackSchedule};
