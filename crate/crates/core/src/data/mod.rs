//! Pressure sequences, per-second labels, evaluation splits, synthetic
//! cohorts and cohort files.

mod io;
mod labels;
mod sequence;
mod split;
mod synth;

pub use io::{decode_cohort, encode_cohort, ingest_csv_dir, load_cohort, save_cohort, COHORT_MAGIC};
pub use labels::label_windows;
pub use sequence::{normalize_levels, Cohort, PressureSequence, TrialId};
pub use split::{make_split, SplitMode, SplitPlan, SplitRatios};
pub use synth::{derive_seed, generate_cohort, SynthConfig};
