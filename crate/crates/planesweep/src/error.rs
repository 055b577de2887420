use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file was read but its content is malformed.
    #[error("{path}: {field}: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("invalid argument `{name}`: {message}")]
    Argument { name: String, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: planesweep_core::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, field: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn config(key: impl Into<String>, message: impl ToString) -> Self {
        Error::Config {
            key: key.into(),
            message: message.to_string(),
        }
    }

    pub fn argument(name: impl Into<String>, message: impl ToString) -> Self {
        Error::Argument {
            name: name.into(),
            message: message.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::Argument { .. } => "argument",
            Error::Core { .. } => "compute",
        }
    }

    /// Process exit status: 2 for bad inputs, 1 for failures while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core { .. } => 1,
            _ => 2,
        }
    }

    /// One-line JSON object for scripts, e.g.
    /// `{"error":"parse","file":"b/poses.txt","field":"line 3","message":"..."}`.
    pub fn machine_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("error".into(), self.kind().into());
        match self {
            Error::Io { path, source } => {
                obj.insert("file".into(), path.display().to_string().into());
                obj.insert("message".into(), source.to_string().into());
            }
            Error::Parse { path, field, message } => {
                obj.insert("file".into(), path.display().to_string().into());
                obj.insert("field".into(), field.clone().into());
                obj.insert("message".into(), message.clone().into());
            }
            Error::Config { key, message } => {
                obj.insert("field".into(), key.clone().into());
                obj.insert("message".into(), message.clone().into());
            }
            Error::Argument { name, message } => {
                obj.insert("field".into(), name.clone().into());
                obj.insert("message".into(), message.clone().into());
            }
            Error::Core { context, source } => {
                obj.insert("field".into(), context.clone().into());
                obj.insert("message".into(), source.to_string().into());
            }
        }
        serde_json::Value::Object(obj).to_string()
    }
}

/// Attaches a description of what was being done to core errors.
pub trait CoreContext<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> CoreContext<T> for planesweep_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Core {
            context: what(),
            source,
        })
    }
}
