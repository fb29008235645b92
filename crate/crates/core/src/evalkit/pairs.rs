//! Labeled code pairs used for supervision and evaluation.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Similar,
    Related,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)+
                    other => Err(Error::invalid(format!("unknown {} {other:?}", stringify!($t).to_lowercase()))),
                }
            }
        }
    };
}

text_enum!(Relation, Similar => "similar", Related => "related");
text_enum!(Split, Train => "train", Test => "test");

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledPair {
    pub code_i: String,
    pub code_j: String,
    pub relation: Relation,
    pub split: Split,
}

/// Pairs with no duplicate unordered pair inside a split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledPairs {
    pairs: Vec<LabeledPair>,
}

impl LabeledPairs {
    pub fn new(pairs: Vec<LabeledPair>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if p.code_i == p.code_j {
                return Err(Error::invalid(format!("pair of {:?} with itself", p.code_i)));
            }
            let key = (p.split, p.code_i.clone().min(p.code_j.clone()), p.code_i.clone().max(p.code_j.clone()));
            if !seen.insert(key) {
                return Err(Error::invalid(format!(
                    "duplicate pair ({}, {}) in {} split",
                    p.code_i, p.code_j, p.split
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Code-id pairs matching the given relation and split (`None` matches all).
    pub fn select(&self, relation: Option<Relation>, split: Option<Split>) -> Vec<(String, String)> {
        self.pairs
            .iter()
            .filter(|p| relation.is_none_or(|r| r == p.relation) && split.is_none_or(|s| s == p.split))
            .map(|p| (p.code_i.clone(), p.code_j.clone()))
            .collect()
    }

    /// CSV with header `code_i,code_j,relation,split`.
    pub fn read_csv<R: Read>(reader: R, label: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["code_i", "code_j", "relation", "split"] {
            return Err(Error::data(label, 1, "expected header code_i,code_j,relation,split"));
        }
        let mut pairs = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::data(label, line, e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or("").to_string();
            let relation = field(2).parse().map_err(|e: Error| Error::data(label, line, e.to_string()))?;
            let split = field(3).parse().map_err(|e: Error| Error::data(label, line, e.to_string()))?;
            pairs.push(LabeledPair {
                code_i: field(0),
                code_j: field(1),
                relation,
                split,
            });
        }
        Self::new(pairs).map_err(|e| Error::data(label, 0, e.to_string()))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["code_i", "code_j", "relation", "split"])?;
        for p in &self.pairs {
            w.write_record([
                p.code_i.as_str(),
                p.code_j.as_str(),
                &p.relation.to_string(),
                &p.split.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
