use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const DEFAULT_TASK_TIMEOUT_S: f64 = 300.0;

/// Scalar task parameter. Lists of scalars are accepted for parameters such
/// as upload paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ParamValue>),
}

impl ParamValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            ParamValue::Str(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(i) => Some(*i),
            ParamValue::Float(f) if f.fract() == 0.0 => Some(*f as i64),
            ParamValue::Str(s) => s.trim().parse().ok(),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[ParamValue]> {
        match self {
            ParamValue::List(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::List(v) => {
                f.write_str("[")?;
                for (i, p) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str("]")
            }
        }
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(s: String) -> Self {
        ParamValue::Str(s)
    }
}

impl From<i64> for ParamValue {
    fn from(i: i64) -> Self {
        ParamValue::Int(i)
    }
}

impl From<f64> for ParamValue {
    fn from(x: f64) -> Self {
        ParamValue::Float(x)
    }
}

impl From<bool> for ParamValue {
    fn from(b: bool) -> Self {
        ParamValue::Bool(b)
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinaryRequirement {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StagedFile {
    /// Path relative to the node scratch directory.
    pub path: String,
    pub content: String,
}

/// What a task needs from the node before the pipeline may run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentRequirement {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub setup_commands: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verify_commands: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binaries: Vec<BinaryRequirement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<StagedFile>,
}

impl EnvironmentRequirement {
    pub fn is_empty(&self) -> bool {
        self.setup_commands.is_empty()
            && self.verify_commands.is_empty()
            && self.binaries.is_empty()
            && self.files.is_empty()
    }

    pub fn setup(mut self, cmd: impl Into<String>) -> Self {
        self.setup_commands.push(cmd.into());
        self
    }

    pub fn verify(mut self, cmd: impl Into<String>) -> Self {
        self.verify_commands.push(cmd.into());
        self
    }

    pub fn binary(mut self, name: impl Into<String>, version: Option<&str>) -> Self {
        self.binaries.push(BinaryRequirement { name: name.into(), version: version.map(str::to_string) });
        self
    }

    pub fn file(mut self, path: impl Into<String>, content: impl Into<String>) -> Self {
        self.files.push(StagedFile { path: path.into(), content: content.into() });
        self
    }
}

/// One unit of work inside a stage.
///
/// `name` may be left empty when building a pipeline; [`Pipeline::then`]
/// assigns `task_type`, or `task_type-<ordinal>` when that is taken.
///
/// [`Pipeline::then`]: crate::model::Pipeline::then
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_type: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "EnvironmentRequirement::is_empty")]
    pub environment: EnvironmentRequirement,
}

fn default_timeout() -> f64 {
    DEFAULT_TASK_TIMEOUT_S
}

impl TaskSpec {
    pub fn new(task_type: impl Into<String>) -> Self {
        Self {
            task_type: task_type.into(),
            name: String::new(),
            params: Params::new(),
            timeout_s: DEFAULT_TASK_TIMEOUT_S,
            environment: EnvironmentRequirement::default(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn param(mut self, key: impl Into<String>, value: impl Into<ParamValue>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn timeout(mut self, seconds: f64) -> Self {
        self.timeout_s = seconds;
        self
    }

    pub fn requires(mut self, env: EnvironmentRequirement) -> Self {
        self.environment = env;
        self
    }

    // Convenience constructors for the builtin library.

    pub fn sleep(seconds: f64) -> Self {
        TaskSpec::new("sleep").param("seconds", seconds)
    }

    pub fn shell(command: impl Into<String>) -> Self {
        TaskSpec::new("shell").param("command", command.into())
    }

    pub fn set_flag(key: impl Into<String>) -> Self {
        TaskSpec::new("set-flag").param("key", key.into())
    }

    pub fn wait_flag(key: impl Into<String>, timeout_s: f64) -> Self {
        TaskSpec::new("wait-flag").param("key", key.into()).param("timeout_s", timeout_s)
    }
}
