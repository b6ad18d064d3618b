use std::fmt;

/// Failure of a pipeline command, carrying the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: manifest, controls map, tensor files, texts. Exit code 2.
    Input(String),
    /// A command needs outputs an earlier step did not produce. Exit code 3.
    MissingUpstream(String),
    /// An analysis failed on valid inputs. Exit code 1.
    Analysis(String),
    /// Writing results failed. Exit code 1.
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::MissingUpstream(_) => 3,
            CliError::Analysis(_) | CliError::Output(_) => 1,
        }
    }

    /// Classifies a library error raised while handling `context`.
    pub fn from_core(context: &str, e: repscope::Error) -> Self {
        use repscope::Error as E;
        match e {
            E::Manifest(_)
            | E::Io { .. }
            | E::Format { .. }
            | E::CorruptFile { .. }
            | E::ShapeMismatch(_)
            | E::InvalidInput(_) => CliError::Input(format!("{context}: {e}")),
            E::DegenerateInput(_) | E::NumericalInstability(_) => {
                CliError::Analysis(format!("{context}: {e}"))
            }
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::MissingUpstream(m) => write!(f, "missing upstream output: {m}"),
            CliError::Analysis(m) => write!(f, "analysis failed: {m}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
