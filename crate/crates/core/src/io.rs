//! JSON spec files.
//!
//! ```json
//! {
//!   "states": ["s", "t"],
//!   "terminals": {"t": 1.0},
//!   "transitions": [{"from": "s", "action": "go", "to": "t", "prob": 1.0, "reward": 0.0}]
//! }
//! ```
//!
//! `prob` may be omitted and defaults to 1.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::mdp::MdpSpec;

#[derive(Debug, Error)]
pub enum SpecFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
}

/// Parses a spec document and applies the schema checks that do not need
/// the full validator.
pub fn parse_spec(text: &str) -> Result<MdpSpec, SpecFileError> {
    let spec: MdpSpec = serde_json::from_str(text).map_err(|e| SpecFileError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    for (i, t) in spec.transitions.iter().enumerate() {
        if !(t.prob.is_finite() && (0.0..=1.0).contains(&t.prob)) {
            return Err(SpecFileError::Field {
                field: format!("transitions[{i}].prob"),
                message: format!("{} is not a probability", t.prob),
            });
        }
    }
    Ok(spec)
}

pub fn to_json(spec: &MdpSpec) -> String {
    // strings, floats and string-keyed maps only
    serde_json::to_string_pretty(spec).expect("spec serializes")
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<MdpSpec, SpecFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SpecFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_spec(&text)
}

pub fn save_spec(spec: &MdpSpec, path: impl AsRef<Path>) -> Result<(), SpecFileError> {
    let path = path.as_ref();
    fs::write(path, to_json(spec) + "\n").map_err(|source| SpecFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        let spec = envs::tree_env();
        save_spec(&spec, &path).unwrap();
        assert_eq!(load_spec(&path).unwrap(), spec);
    }

    #[test]
    fn prob_defaults_to_one() {
        let spec = parse_spec(
            r#"{"states":["s","t"],"terminals":{"t":0},
                "transitions":[{"from":"s","action":"a","to":"t","reward":-1}]}"#,
        )
        .unwrap();
        assert_eq!(spec.transitions[0].prob, 1.0);
    }

    #[test]
    fn bad_prob_names_transition_index() {
        let err = parse_spec(
            r#"{"states":["s","t"],"terminals":{"t":0},
                "transitions":[{"from":"s","action":"a","to":"t","prob":1.0,"reward":0},
                               {"from":"s","action":"b","to":"t","prob":1.5,"reward":0}]}"#,
        )
        .unwrap_err();
        match err {
            SpecFileError::Field { field, .. } => assert_eq!(field, "transitions[1].prob"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_states_is_parse_error() {
        let err = parse_spec(r#"{"terminals":{},"transitions":[]}"#).unwrap_err();
        match err {
            SpecFileError::Parse { message, .. } => assert!(message.contains("states")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_spec("/definitely/not/here.json"),
            Err(SpecFileError::Io { .. })
        ));
    }
}
