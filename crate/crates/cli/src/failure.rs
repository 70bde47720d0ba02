use std::fmt;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<simavg::Error> for Failure {
    fn from(e: simavg::Error) -> Self {
        use simavg::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(m) => Failure::Usage(m),
            E::Data { line, column, message } => {
                Failure::Data(format!("line {line}, column {column}: {message}"))
            }
            E::Io(_) | E::Csv(_) => Failure::Data(msg),
            E::DegenerateRow { .. }
            | E::NoValidBandwidth
            | E::Conditioning(_)
            | E::NoSelectableModel
            | E::AllFitsFailed(_)
            | E::DegenerateScreen => Failure::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;
