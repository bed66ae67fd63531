pub mod plan;
pub mod reliability;
pub mod report;
pub mod simulate;
pub mod verify;

/// How a command that ran to completion went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    /// A verification found a mismatch.
    Fail,
}
