use std::path::PathBuf;

/// Failures of the file-level toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Dataset(String),
    #[error(transparent)]
    Core(#[from] glandseg_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>) -> impl FnOnce(image::ImageError) -> Self {
        let path = path.into();
        move |source| Error::Image { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Self {
        let path = path.into();
        move |source| Error::Csv { path, source }
    }

    /// Short machine-readable category, printed as `error[<category>]`.
    pub fn category(&self) -> &'static str {
        use glandseg_core::Error as Core;
        match self {
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Csv { .. } => "csv",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::Core(e) => match e {
                Core::InvalidConfig(_) => "config",
                Core::Diverged { .. } | Core::NonFiniteGradient { .. } | Core::NonFinite { .. } => {
                    "diverged"
                }
                Core::Checkpoint(_) => "checkpoint",
                Core::LabelOutOfRange { .. } => "dataset",
                _ => "invalid-input",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "dataset" | "image" | "csv" => 3,
            "io" => 4,
            "diverged" => 5,
            "checkpoint" => 6,
            _ => 1,
        }
    }
}
