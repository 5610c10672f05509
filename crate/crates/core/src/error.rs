use thiserror::Error;

/// Errors raised by graph construction, firing, parameterisation and the
/// virtual ciphertext container.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node `{0}` already exists")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("arity mismatch: {0}")]
    Arity(String),
    #[error("generator for `{node}` produced {produced} values for {edges} edges")]
    GeneratorUnderrun {
        node: String,
        produced: usize,
        edges: usize,
    },
    #[error("node `{node}` failed: {source}")]
    Node {
        node: String,
        #[source]
        source: Box<Error>,
    },
    #[error("cost discovery did not terminate (cycle through `{0}`)")]
    Cycle(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{len} values exceed the slot capacity of {capacity}")]
    Capacity { len: usize, capacity: usize },
    #[error("key mismatch")]
    KeyMismatch,
    #[error("parameter set mismatch")]
    ParamsMismatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("modulus chain exhausted after {depth} multiplications")]
    LevelExhausted { depth: usize },
    #[error("slot segment {start}..{end} out of range for {len} slots")]
    Slice { start: usize, end: usize, len: usize },
    #[error("operation requires a plaintext signal")]
    PlaintextRequired,
    #[error("invalid node state: {0}")]
    State(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_node(node: &str, source: Error) -> Error {
        Error::Node {
            node: node.to_owned(),
            source: Box::new(source),
        }
    }

    /// The innermost error, skipping node annotations.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Node { source, .. } => source.root_cause(),
            other => other,
        }
    }

    /// Id of the node whose receptor raised this error, if any.
    pub fn failing_node(&self) -> Option<&str> {
        match self {
            Error::Node { node, .. } => Some(node),
            _ => None,
        }
    }

    pub fn is_level_exhausted(&self) -> bool {
        matches!(self.root_cause(), Error::LevelExhausted { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
