use std::fmt;

use malens_core::analysis::{AnalysisError, ErrorClass};

/// A command failure tagged with its exit class.
pub struct Failure {
    pub class: ErrorClass,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(class: ErrorClass, error: impl Into<anyhow::Error>) -> Self {
        Self {
            class,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Input => 2,
            ErrorClass::Provider => 3,
            ErrorClass::Internal => 4,
        }
    }
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {:#}", self.class, self.error)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Self::new(e.class(), e)
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait Classify<T> {
    fn input(self) -> Outcome<T>;
    fn provider(self) -> Outcome<T>;
    fn internal(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Outcome<T> {
        self.map_err(|e| Failure::new(ErrorClass::Input, e))
    }

    fn provider(self) -> Outcome<T> {
        self.map_err(|e| Failure::new(ErrorClass::Provider, e))
    }

    fn internal(self) -> Outcome<T> {
        self.map_err(|e| Failure::new(ErrorClass::Internal, e))
    }
}
