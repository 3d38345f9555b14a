//! JSON-lines files: one motion or one view per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{MotionSequence3D, ProjectedView};
use crate::error::{Error, Result};

fn read_lines<T: DeserializeOwned, R: BufRead>(reader: R, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_lines<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_motions(path: &Path) -> Result<Vec<MotionSequence3D>> {
    let motions: Vec<MotionSequence3D> = read_lines(BufReader::new(std::fs::File::open(path)?), path)?;
    for m in &motions {
        m.validate()?;
    }
    Ok(motions)
}

pub fn write_motions(path: &Path, motions: &[MotionSequence3D]) -> Result<()> {
    write_lines(motions, BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_views(path: &Path) -> Result<Vec<ProjectedView>> {
    let views: Vec<ProjectedView> = read_lines(BufReader::new(std::fs::File::open(path)?), path)?;
    for v in &views {
        v.validate()?;
    }
    Ok(views)
}

pub fn write_views(path: &Path, views: &[ProjectedView]) -> Result<()> {
    write_lines(views, BufWriter::new(std::fs::File::create(path)?))
}
