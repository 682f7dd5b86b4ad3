//! Scale-adaptive partition learning for cross-view (drone/satellite) image
//! retrieval.
//!
//! The crate is organized around a feature-map pipeline:
//!
//! 1. [`tensor`] — dense feature maps, bilinear resampling, masked pooling and
//!    the `FMAP1` on-disk format.
//! 2. [`geometry`] — concentric square partition plans, the height-driven
//!    scale factor that grows or shrinks drone-side partitions, and the
//!    square-ring baseline.
//! 3. [`refinement`] — saliency heatmaps built from channel activations and a
//!    center-peaked coordinate prior, threshold masks, and the
//!    global/salient/background split of each partition.
//! 4. [`augment`] — mirror-pad / ring-crop height simulation with the matching
//!    height relabel.
//! 5. [`synth`] — deterministic top-down scene generator, handcrafted feature
//!    extractor and partition alignment scoring used as the desk-scale stand-in
//!    for real aerial imagery.
//! 6. [`model`] — per-partition classifier heads (FC→BN→Dropout→Cls) trained
//!    with hand-derived gradients and SGD.
//! 7. [`retrieval`] — exact Euclidean ranking with Recall@K / AP evaluation.
//! 8. [`pipeline`] — end-to-end wiring from a dataset manifest to a metrics
//!    report, plus the alpha/delta-p sweep.

pub mod augment;
pub mod config;
pub mod fmap;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod refinement;
pub mod retrieval;
pub mod synth;
pub mod tensor;

pub use config::RunConfig;
pub use geometry::{HeightModel, PartitionPlan, SquareRegion};
pub use refinement::{BinaryMask, CmMetric, CoordinateMap, Heatmap, SgrsOutput};
pub use retrieval::{EmbeddingRecord, RankingResult};
pub use tensor::{Image, Tensor3};
