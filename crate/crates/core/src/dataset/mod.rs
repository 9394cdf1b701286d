//! Gaze sample containers, the `GZDS` file format, a procedural eye/face
//! renderer and leave-one-subject-out splits.

mod format;
mod split;
mod synth;

pub use format::{Dataset, DatasetHeader, Geometry, SampleRecord, GZDS_MAGIC, GZDS_VERSION};
pub use split::{split_leave_one_subject_out, DatasetView};
pub use synth::{render_sample, synth_generate, write_synth, SubjectAppearance, SynthConfig};
