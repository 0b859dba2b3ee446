use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Contact,
    Path,
    Mapping,
    Refine,
    Audit,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Contact => "contact",
            Stage::Path => "path",
            Stage::Mapping => "mapping",
            Stage::Refine => "refine",
            Stage::Audit => "audit",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh is not watertight: {} open or non-manifold edges", .0.len())]
    NonWatertight(Vec<(u32, u32)>),

    #[error("no sign crossing at the requested iso level")]
    EmptySurface,

    #[error("grids cannot be resampled onto a common lattice: {0}")]
    LatticeMismatch(String),

    #[error("ICP diverged: rms {rms:.3e} m exceeds limit {limit:.3e} m")]
    IcpDiverged { rms: f64, limit: f64 },

    #[error("contact field carries no contactness")]
    EmptyContacts,

    #[error("energy or gradient became non-finite at iteration {0}")]
    NonFinite(usize),

    #[error("all keypoint weights are zero")]
    AllInvisible,

    #[error("joint {joint} is behind camera {view}")]
    BehindCamera { joint: usize, view: usize },

    #[error("sequence needs at least 3 frames, got {0}")]
    TooShort(usize),

    #[error("simulation unstable: object moved {0:.3} m")]
    Unstable(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub fn at(self, stage: Stage) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Stage tag, if the error has been attributed to one.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
