//! Frame-wise label simulation from CTC spike alignments.
//!
//! A CTC teacher's constrained best path is reduced to spike segments, and
//! each spike is grown into the neighbouring blank frames by left/right
//! ratios to produce hard or soft (tapered) frame-wise targets. Those
//! targets drive cross-entropy pre-training of a streaming encoder that is
//! then trained with the transducer loss.
//!
//! Modules:
//! - [`tensor_io`]: tensor files, label records, manifests, decode records
//! - [`ctc`]: CTC loss/gradient, state occupation, best-path alignment
//! - [`label_sim`]: hard/soft spike expansion
//! - [`framewise`]: frame-wise CE/KL losses
//! - [`transducer`]: transducer loss/gradient, greedy and beam decoding
//! - [`metrics`]: WER and emission latency
//! - [`toy`]: synthetic end-to-end pipeline
//!
//! Blank is vocabulary index 0 everywhere; frames are 0-based.

pub mod ctc;
pub mod error;
pub mod framewise;
pub mod label_sim;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod tensor_io;
pub mod toy;
pub mod transducer;

pub use ctc::{AlignmentMode, AlignmentPath, SpikeSegment, BLANK};
pub use error::{Error, Result};
pub use label_sim::{ExpansionConfig, FrameLabels, LabelMode, SoftFrameLabels, SoftTarget};
pub use matrix::{LogitMatrix, Matrix};
pub use metrics::{LatencyReport, WerResult};
pub use tensor_io::{FrameTargets, LabelRecord, Manifest, Tensor, UtteranceRecord, WordBoundary};
pub use transducer::{DecodeResult, JointScorer, TransducerLattice};
