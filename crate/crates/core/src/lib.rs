//! Near-duplicate image retrieval.
//!
//! The building blocks, bottom up:
//!
//! * [`imaging`] decodes images and implements the pixel operations.
//! * [`manip`] is the fixed catalog of 22 manipulations used as queries.
//! * [`orb`] extracts ORB keypoints and 256-bit descriptors and compresses
//!   them to 128-bit codes with a fitted PCA projection.
//! * [`phash`] is the 64-bit DCT perceptual hash.
//! * [`index`] is the exact flat nearest-neighbour index with vote-count and
//!   distance retrieval.
//! * [`classifier`] decides whether a top result is a real near-duplicate.
//! * [`eval`] scores recall@k and computes the summary statistics.
//! * [`feature_io`] holds the binary feature file and the JSON Lines
//!   manifests.
//! * [`pipeline`] chains the stages together.

mod codec;

pub mod classifier;
pub mod eval;
pub mod feature_io;
pub mod features;
pub mod imaging;
pub mod index;
pub mod manip;
pub mod orb;
pub mod phash;
pub mod pipeline;
pub mod synth;

pub use features::{DescriptorSet, FeatureKind};
pub use imaging::Raster;
pub use index::{FlatIndex, QueryParams, RetrievalMode, RetrievalResult};
pub use phash::PerceptualHash;
