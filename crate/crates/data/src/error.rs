use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("raster: {0}")]
    Raster(String),
    #[error("image {id}: mask is empty at threshold {threshold}")]
    EmptyMask { id: String, threshold: f32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: unknown diagnosis label {label:?}")]
    UnknownLabel { path: PathBuf, line: u64, label: String },
    #[error("no image for id {id:?} in {dir} (tried .png, .ppm)")]
    MissingImage { id: String, dir: PathBuf },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Core(#[from] fdcnn::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
