use thiserror::Error;

/// Errors raised by the simulation, mapping and evaluation pipeline.
#[derive(Debug, Error)]
pub enum SealError {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("ray origin {0:?} lies outside the grid")]
    OriginOutsideGrid([f64; 3]),
    #[error("scene generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("no free spawn cell in scene")]
    NoFreeSpawn,
    #[error("map of {cells} cells exceeds the allocation cap of {cap}")]
    AllocationTooLarge { cells: usize, cap: usize },
    #[error("invalid map dimensions {0:?}")]
    InvalidDims([usize; 4]),
    #[error("no reachable free cell to select as a waypoint")]
    NoReachableCells,
    #[error("planner goal {0:?} is occupied")]
    GoalOccupied((usize, usize)),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid value: {0}")]
    InvalidArgument(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SealError>;
