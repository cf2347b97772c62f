//! Geometry measures for high-dimensional point clouds.
//!
//! The crate quantizes a cloud with a product or additive quantizer and
//! derives cell-density, reconstruction and cluster-shape measures from the
//! result. It also computes whole-cloud spread measures from the covariance
//! spectrum, profiles corpus samples, and fits linear models from measures to
//! external scores.
//!
//! ```
//! use latent_geometry::{pointcloud, spread};
//!
//! let cloud = pointcloud::generate_uniform(2000, 4, 0.0, 1.0, 7).unwrap();
//! let s = spread::eigen_spectrum(&cloud).unwrap();
//! let e = spread::eee(&s).unwrap();
//! assert!(e < 0.1);
//! ```

pub mod analysis;
pub mod corpus;
mod error;
pub mod linalg;
pub mod pointcloud;
pub mod qmeasures;
pub mod quantizer;
pub mod random;
pub mod spread;
pub mod suite;

pub use error::{Error, Result};
pub use pointcloud::{MatrixFormat, MixtureComponent, MixtureSpec, PointCloud};
pub use qmeasures::{Measure, MeasureReport, MeasureValue, Status};
pub use quantizer::{Assignment, CellStats, QuantizationModel, QuantizerKind};
pub use spread::EigenSpectrum;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    struct PointClouds;
    #[doc = include_str!("../../../book/src/spread.md")]
    struct Spread;
    #[doc = include_str!("../../../book/src/quantization.md")]
    struct Quantization;
    #[doc = include_str!("../../../book/src/cell-measures.md")]
    struct CellMeasures;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/analysis.md")]
    struct Analysis;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
