//! Outcome categories and their exit codes.
//!
//! | outcome                                  | code |
//! |------------------------------------------|------|
//! | feasible solution (V=1), bench finished  | 0    |
//! | unusable input, flags or configuration   | 2    |
//! | backend construction or reply failure    | 3    |
//! | inconsistent model, no execution, infeasible | 4 |
//! | internal error                           | 5    |

use std::fmt;
use std::process::ExitCode;

use optira::pipeline::FailureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Input,
    Backend,
    Inconsistent,
    Execution,
    Infeasible,
    Internal,
}

impl Outcome {
    pub const ALL: [Outcome; 7] = [
        Outcome::Success,
        Outcome::Input,
        Outcome::Backend,
        Outcome::Inconsistent,
        Outcome::Execution,
        Outcome::Infeasible,
        Outcome::Internal,
    ];

    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Input => 2,
            Outcome::Backend => 3,
            Outcome::Inconsistent | Outcome::Execution | Outcome::Infeasible => 4,
            Outcome::Internal => 5,
        }
    }
}

impl From<FailureKind> for Outcome {
    fn from(k: FailureKind) -> Self {
        match k {
            FailureKind::Input => Outcome::Input,
            FailureKind::Backend => Outcome::Backend,
            FailureKind::Inconsistent => Outcome::Inconsistent,
            FailureKind::Execution => Outcome::Execution,
            FailureKind::Infeasible => Outcome::Infeasible,
        }
    }
}

impl From<Outcome> for ExitCode {
    fn from(o: Outcome) -> Self {
        ExitCode::from(o.code())
    }
}

/// A failure carrying its category.
#[derive(Debug)]
pub struct Failure {
    pub outcome: Outcome,
    pub message: String,
}

impl Failure {
    pub fn new(outcome: Outcome, message: impl fmt::Display) -> Failure {
        Failure {
            outcome,
            message: message.to_string(),
        }
    }

    pub fn input(message: impl fmt::Display) -> Failure {
        Failure::new(Outcome::Input, message)
    }

    pub fn backend(message: impl fmt::Display) -> Failure {
        Failure::new(Outcome::Backend, message)
    }

    pub fn internal(message: impl fmt::Display) -> Failure {
        Failure::new(Outcome::Internal, message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_table() {
        let codes: Vec<u8> = Outcome::ALL.iter().map(|o| o.code()).collect();
        assert_eq!(codes, [0, 2, 3, 4, 4, 4, 5]);
    }

    #[test]
    fn every_failure_kind_is_nonzero() {
        let kinds = [
            FailureKind::Input,
            FailureKind::Backend,
            FailureKind::Inconsistent,
            FailureKind::Execution,
            FailureKind::Infeasible,
        ];
        let codes: Vec<u8> = kinds.into_iter().map(|k| Outcome::from(k).code()).collect();
        assert_eq!(codes, [2, 3, 4, 4, 4]);
    }
}
