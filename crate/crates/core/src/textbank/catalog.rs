use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::geometry::ORIENTATION_BINS;

/// Orientation slot of a description or embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinKey {
    Bin(i32),
    Wildcard,
}

impl BinKey {
    pub fn bin(deg: i32) -> Result<Self> {
        if ORIENTATION_BINS.contains(&deg) {
            Ok(BinKey::Bin(deg))
        } else {
            Err(invalid(format!("{deg} is not an orientation bin")))
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "*" {
            return Ok(BinKey::Wildcard);
        }
        let deg: i32 = s
            .parse()
            .map_err(|_| invalid(format!("`{s}` is neither a bin nor `*`")))?;
        Self::bin(deg)
    }
}

impl fmt::Display for BinKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinKey::Bin(d) => write!(f, "{d}"),
            BinKey::Wildcard => f.write_str("*"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionDescription {
    pub action: String,
    pub orientation_bin: BinKey,
    pub text: String,
}

/// Side of the body facing the camera for a relative orientation bin.
pub fn bin_phrase(bin: i32) -> Result<&'static str> {
    Ok(match BinKey::bin(bin)? {
        BinKey::Bin(0) => "front",
        BinKey::Bin(30) => "front-left",
        BinKey::Bin(60) => "left-front",
        BinKey::Bin(90) => "left",
        BinKey::Bin(120) => "left-back",
        BinKey::Bin(150) => "back-left",
        BinKey::Bin(-180) => "back",
        BinKey::Bin(-150) => "back-right",
        BinKey::Bin(-120) => "right-back",
        BinKey::Bin(-90) => "right",
        BinKey::Bin(-60) => "right-front",
        BinKey::Bin(-30) => "front-right",
        _ => unreachable!("validated above"),
    })
}

/// Authored `(action, bin)` descriptions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DescriptionCatalog {
    entries: BTreeMap<(String, BinKey), String>,
}

/// `(label, verb phrase, front clause, back clause)`
const AUTHORED: &[(&str, &str, &str, &str)] = &[
    (
        "wave",
        "waves",
        "the right hand swings side to side above the shoulder while the legs stay still",
        "the raised right elbow rocks side to side beside the head while the legs stay still",
    ),
    (
        "raise_arm",
        "raises an arm",
        "the right arm swings straight up above the head and back down to the side while the legs stay still",
        "the right elbow swings up past the shoulder line and back down while the legs stay still",
    ),
    (
        "point",
        "points",
        "the right arm extends forward at shoulder height toward a target while the legs stay still",
        "the right arm reaches forward past the torso, the hand hidden in front of the body, while the legs stay still",
    ),
    (
        "squat",
        "squats",
        "both knees bend deeply as the hips lower and rise again while the arms stay low",
        "the hips drop behind the bending knees and rise again while the arms stay low",
    ),
    (
        "jumping_jack",
        "does jumping jacks",
        "both arms swing overhead while the legs spread apart and close together",
        "both elbows sweep overhead while the feet spread apart and close together",
    ),
    (
        "march",
        "marches",
        "the knees lift high in turn, one leg after the other, while the arms stay low",
        "the heels rise in turn as each knee lifts forward while the arms stay low",
    ),
    (
        "clapping",
        "claps",
        "both hands meet in front of the chest again and again while the legs stay still",
        "both elbows draw toward each other again and again, the hands hidden in front of the chest",
    ),
];

impl DescriptionCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Descriptions for the synthetic actions plus `clapping`: one wildcard
    /// entry per action and one entry per bin. Views from behind describe
    /// the elbows rather than the hidden hands.
    pub fn builtin() -> Self {
        let mut cat = Self::new();
        for (label, verb, front, back) in AUTHORED {
            cat.insert(label, BinKey::Wildcard, format!("A person {verb}, {front}."))
                .expect("authored entries are unique");
            for &bin in &ORIENTATION_BINS {
                let phrase = bin_phrase(bin).expect("valid bin");
                let clause = if bin.abs() >= 120 { back } else { front };
                let text = format!("A person {verb}, seen from the {phrase} side: {clause}.");
                cat.insert(label, BinKey::Bin(bin), text).expect("authored entries are unique");
            }
        }
        cat
    }

    pub fn insert(&mut self, action: &str, bin: BinKey, text: impl Into<String>) -> Result<()> {
        let text = text.into();
        if action.is_empty() || text.trim().is_empty() {
            return Err(invalid("descriptions need an action and a non-empty text"));
        }
        let key = (action.to_string(), bin);
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey(format!("{action}|{bin}")));
        }
        self.entries.insert(key, text);
        Ok(())
    }

    pub fn get(&self, action: &str, bin: BinKey) -> Option<&str> {
        self.entries.get(&(action.to_string(), bin)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn actions(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.keys().map(|(a, _)| a.clone()).collect();
        v.dedup();
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = ActionDescription> + '_ {
        self.entries.iter().map(|((a, b), t)| ActionDescription {
            action: a.clone(),
            orientation_bin: *b,
            text: t.clone(),
        })
    }

    /// Tab-separated `action, bin or *, text` lines; `#` starts a comment.
    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut cat = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(action), Some(bin), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `action<TAB>bin<TAB>text`".into()));
            };
            let bin = BinKey::parse(bin).map_err(|e| err(e.to_string()))?;
            cat.insert(action, bin, text).map_err(|e| err(e.to_string()))?;
        }
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file), path)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for d in self.iter() {
            writeln!(out, "{}\t{}\t{}", d.action, d.orientation_bin, d.text)?;
        }
        Ok(())
    }
}

/// Catalog entry for `(action, bin)`, then the action's wildcard entry, then
/// a generated sentence naming the visible side.
pub fn render_description(
    catalog: &DescriptionCatalog,
    action: &str,
    orientation_bin: i32,
) -> Result<ActionDescription> {
    if action.trim().is_empty() {
        return Err(invalid("action must not be empty"));
    }
    let bin = BinKey::bin(orientation_bin)?;
    let text = match catalog.get(action, bin).or_else(|| catalog.get(action, BinKey::Wildcard)) {
        Some(t) => t.to_string(),
        None => format!(
            "A person {}, seen from the {} side.",
            action.replace('_', " "),
            bin_phrase(orientation_bin)?
        ),
    };
    Ok(ActionDescription {
        action: action.to_string(),
        orientation_bin: bin,
        text,
    })
}
