use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected_w}x{expected_h}, got {got_w}x{got_h})")]
    Dimension {
        what: &'static str,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("no valid pixels for {0}")]
    NoValidPixels(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::Dimension {
            what,
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
