//! Dataset loading, marching cubes, mesh export and camera paths.

pub mod dataset;
pub mod marching_cubes;
pub mod mesh;
pub mod spherical;
pub mod synth;

use std::path::Path;

pub use dataset::{load_dataset, write_dataset, CalibratedDataset, DatasetFormat};
pub use marching_cubes::marching_cubes;
pub use mesh::{export_mesh, import_mesh, MeshFormat, TriangleMesh};
pub use spherical::{linspace, spherical_poses, up_vector, CameraPath, PathError};
pub use synth::{orbit_cameras, synthetic_dataset};

use crate::imageio::ImageError;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    Missing(String),
    #[error("pose {index} is not rigid: {reason}")]
    NonRigid { index: usize, reason: String },
    #[error("count mismatch: expected {expected} {what}, found {found}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("marching cubes needs at least 8 cells per axis, got {0}")]
    Resolution(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Path(#[from] PathError),
}

impl GeometryError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::Missing(path.display().to_string())
        } else {
            Self::Io {
                path: path.display().to_string(),
                source,
            }
        }
    }
}
