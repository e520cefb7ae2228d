//! Semi-supervised automatic modulation classification.
//!
//! Radio frames are synthesized ([`sigsyn`]) or loaded ([`dataio`]), an
//! encoder is pretrained with rotation-augmented contrastive learning
//! ([`augment`], [`contrastive`]), and a small classifier is trained on a few
//! labels ([`pipeline`]) and scored per SNR ([`eval`]).

pub mod augment;
pub mod contrastive;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod sigsyn;

pub use augment::{make_pair, rotate, RotationAngle, ViewPair};
pub use dataio::{normalize, split, select_subsets, Dataset, IqFrame, Provenance, SplitRatio, SplitTag, SubsetSelection, Subsets};
pub use error::{Error, ErrorKind, Result};
pub use sigsyn::{generate_dataset, ChannelModel, ModulationScheme, PulseShape, SynthSpec, NUM_CLASSES};
