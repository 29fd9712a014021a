use std::fmt;

/// A failed run, carrying its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed inputs. Exit 2.
    Input(String),
    /// A result that violates the command's contract. Exit 3.
    Contract(String),
    /// Divergence or NaN. Exit 4.
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Contract(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Contract(m) => write!(f, "contract violation: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<handocc::Error> for Failure {
    fn from(e: handocc::Error) -> Self {
        match e {
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            handocc::Error::NotWatertight(_) => Failure::Contract(e.to_string()),
            e => Failure::Input(e.to_string()),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;
