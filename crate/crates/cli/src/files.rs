//! Reading inputs and writing outputs.

use std::path::{Path, PathBuf};

use handocc::refine::{PairPose, PairSkeletons};
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::failure::{Failure, Outcome};

pub fn read_text(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

/// Parses a JSON file. Syntax errors carry line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Outcome<()> {
    handocc::io::write_atomic(path, bytes).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<S: serde::Serialize>(path: &Path, v: &S) -> Outcome<()> {
    handocc::io::write_json(path, v).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Refuses runs whose outputs would overwrite one of their inputs.
pub fn check_no_clobber(inputs: &[PathBuf], outputs: &[PathBuf]) -> Outcome<()> {
    for o in outputs {
        if let Some(i) = inputs.iter().find(|i| same_file(i, o)) {
            return Err(Failure::Input(format!("output {} would overwrite input {}", o.display(), i.display())));
        }
    }
    Ok(())
}

/// What a pair file may hold.
#[derive(Clone, Debug)]
pub enum PairFile {
    Skeletons(PairSkeletons),
    Poses(PairPose),
    List(Vec<PairSkeletons>),
}

impl PairFile {
    pub fn read(path: &Path) -> Outcome<Self> {
        let v: Value = read_json(path)?;
        let bad = |e: serde_json::Error| Failure::Input(format!("{}: {e}", path.display()));
        let out = if v.is_array() {
            PairFile::List(serde_json::from_value(v).map_err(bad)?)
        } else if v.get("pose_r").is_some() {
            let p: PairPose = serde_json::from_value(v).map_err(bad)?;
            p.validate()?;
            PairFile::Poses(p)
        } else if v.get("right").is_some() {
            PairFile::Skeletons(serde_json::from_value(v).map_err(bad)?)
        } else {
            return Err(Failure::Input(format!(
                "{}: expected a pair {{\"right\", \"left\"}}, a pose pair {{\"pose_r\", \"pose_l\", \"relative_offset\"}} or a list of pairs",
                path.display()
            )));
        };
        Ok(out)
    }

    /// All pairs as skeletons.
    pub fn skeleton_pairs(&self) -> Outcome<Vec<PairSkeletons>> {
        Ok(match self {
            PairFile::Skeletons(p) => vec![p.clone()],
            PairFile::Poses(p) => {
                let (right, left) = p.skeletons()?;
                vec![PairSkeletons { right, left }]
            }
            PairFile::List(v) => v.clone(),
        })
    }

    /// Exactly one pair, as skeletons.
    pub fn single(&self) -> Outcome<PairSkeletons> {
        let mut v = self.skeleton_pairs()?;
        if v.len() != 1 {
            return Err(Failure::Input(format!("expected one pair, found {}", v.len())));
        }
        Ok(v.remove(0))
    }
}
