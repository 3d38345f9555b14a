use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::catalog::BinKey;
use crate::error::{invalid, Error, Result};

/// `<action>|<bin>` or `<action>|*`
pub fn table_key(action: &str, bin: BinKey) -> String {
    format!("{action}|{bin}")
}

fn check_key(key: &str) -> Result<()> {
    let (action, bin) = key
        .rsplit_once('|')
        .ok_or_else(|| invalid(format!("key `{key}` lacks `|`")))?;
    if action.is_empty() {
        return Err(invalid(format!("key `{key}` has an empty action")));
    }
    BinKey::parse(bin)?;
    Ok(())
}

/// Precomputed text embeddings keyed by action and orientation bin.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl TextEmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("embedding dim must be positive"));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let key = key.into();
        check_key(&key)?;
        if vector.len() != self.dim {
            return Err(invalid(format!(
                "vector for `{key}` has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("vector for `{key}` is not finite")));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(invalid(format!("vector for `{key}` is zero")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(err(1, "empty file, expected `#dim<TAB><n>`".into())),
        };
        let dim = header
            .strip_prefix("#dim\t")
            .and_then(|d| d.trim_end().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| err(1, format!("malformed header `{header}`")))?;
        let mut table = Self::new(dim)?;
        for (i, line) in lines {
            let line = line?;
            let n = i + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let key = fields.next().unwrap_or_default().to_string();
            let values = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| err(n, format!("bad number for `{key}`: {e}")))?;
            if values.len() != dim {
                return Err(err(n, format!("`{key}` has {} values, expected {dim}", values.len())));
            }
            match table.insert(key.clone(), values) {
                Ok(()) => {}
                Err(Error::DuplicateKey(k)) => return Err(err(n, format!("duplicate key `{k}`"))),
                Err(e) => return Err(err(n, e.to_string())),
            }
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#dim\t{}", self.dim)?;
        for (k, v) in &self.entries {
            out.write_all(k.as_bytes())?;
            for x in v {
                // shortest representation that parses back to the same bits
                write!(out, "\t{x:?}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

pub fn load_embedding_table(path: &Path) -> Result<TextEmbeddingTable> {
    let file = std::fs::File::open(path)?;
    TextEmbeddingTable::parse(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(key: &str, n: usize) -> String {
        let vals: Vec<String> = (0..n).map(|i| format!("{}", 0.5 + i as f64)).collect();
        format!("{key}\t{}\n", vals.join("\t"))
    }

    #[test]
    fn parses_rows_and_comments() {
        let mut text = "#dim\t512\n# authored offline\n".to_string();
        for b in crate::geometry::ORIENTATION_BINS {
            text += &row(&format!("wave|{b}"), 512);
            text += &row(&format!("squat|{b}"), 512);
        }
        let t = TextEmbeddingTable::parse(text.as_bytes(), Path::new("t.tsv")).unwrap();
        assert_eq!((t.len(), t.dim()), (24, 512));
    }

    #[test]
    fn short_row_names_its_line() {
        let text = format!("#dim\t512\n{}{}", row("wave|0", 512), row("wave|30", 511));
        match TextEmbeddingTable::parse(text.as_bytes(), Path::new("t.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_named() {
        let text = format!("#dim\t2\n{}{}", row("wave|*", 2), row("wave|*", 2));
        let e = TextEmbeddingTable::parse(text.as_bytes(), Path::new("t.tsv")).unwrap_err();
        assert!(e.to_string().contains("wave|*"), "{e}");
    }

    #[test]
    fn malformed_inputs() {
        for text in ["dim\t3\n", "#dim\t0\n", "", "#dim\t2\nwave|0\t1\tinf\n", "#dim\t2\nwave|45\t1\t2\n"] {
            assert!(
                matches!(TextEmbeddingTable::parse(text.as_bytes(), Path::new("x")), Err(Error::Parse { .. })),
                "{text:?}"
            );
        }
    }

    #[test]
    fn write_read_is_bit_exact() {
        let mut t = TextEmbeddingTable::new(3).unwrap();
        t.insert("a|*", vec![0.1, -1e-300, std::f64::consts::PI]).unwrap();
        t.insert("a|-30", vec![1.0 / 3.0, 2.5e17, -0.0]).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = TextEmbeddingTable::parse(&buf[..], Path::new("m")).unwrap();
        for (k, v) in t.iter() {
            let w = back.get(k).unwrap();
            assert!(v.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
