//! Error classification behind the process exit codes: 1 for usage problems,
//! 2 for data problems, 3 for numerical failures.

use mtmf::dataset::DataError;
use mtmf::eval::EvalError;
use mtmf::linalg::LinalgError;
use mtmf::model_io::ModelIoError;
use mtmf::solver::SolverError;

#[derive(Debug)]
pub enum AppError {
    /// Bad invocation or config; exit code 1.
    Usage(String),
    /// Broken or inconsistent data, unreadable inputs/outputs; exit code 2.
    Data(String),
    /// Numerical failure inside the solver; exit code 3.
    Numerical(String),
}

impl AppError {
    pub fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Numerical(m) => m,
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec(_) => AppError::Usage(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<LinalgError> for AppError {
    fn from(e: LinalgError) -> Self {
        AppError::Numerical(e.to_string())
    }
}

impl From<SolverError> for AppError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidHyperParams(_) => AppError::Usage(e.to_string()),
            SolverError::DimensionMismatch(_) | SolverError::TaskOutOfRange { .. } => {
                AppError::Data(e.to_string())
            }
            SolverError::SingularSystem | SolverError::DegenerateW | SolverError::Linalg(_) => {
                AppError::Numerical(e.to_string())
            }
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        fn classify(e: &EvalError) -> i32 {
            match e {
                EvalError::Solver(inner) => match AppError::from_solver_ref(inner) {
                    AppError::Numerical(_) => 3,
                    _ => 2,
                },
                EvalError::Experiment { source, .. } => classify(source),
                _ => 2,
            }
        }
        match classify(&e) {
            3 => AppError::Numerical(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl AppError {
    fn from_solver_ref(e: &SolverError) -> AppError {
        match e {
            SolverError::SingularSystem | SolverError::DegenerateW | SolverError::Linalg(_) => {
                AppError::Numerical(e.to_string())
            }
            SolverError::InvalidHyperParams(_) => AppError::Usage(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<ModelIoError> for AppError {
    fn from(e: ModelIoError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<mtmf::bound::BoundError> for AppError {
    fn from(e: mtmf::bound::BoundError) -> Self {
        AppError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}
