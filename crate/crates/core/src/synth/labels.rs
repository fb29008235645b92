//! Positive/negative label-pair files consumed by the perturbation generator.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Positive,
    Negative,
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
        })
    }
}

/// CSV with header `code_i,code_j,label`.
pub fn read_label_pairs<R: Read>(reader: R, label: &str) -> Result<Vec<(String, String, PairLabel)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["code_i", "code_j", "label"] {
        return Err(Error::data(label, 1, "expected header code_i,code_j,label"));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize::<(String, String, PairLabel)>().enumerate() {
        out.push(rec.map_err(|e| Error::data(label, k + 2, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_label_pairs<W: std::io::Write>(pairs: &[(String, String, PairLabel)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["code_i", "code_j", "label"])?;
    for (a, b, l) in pairs {
        w.write_record([a.as_str(), b.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
