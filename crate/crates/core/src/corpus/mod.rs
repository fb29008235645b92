//! Code vocabulary, co-occurrence counting, SPPMI construction and SVD
//! embeddings.

mod cooccur;
pub(crate) mod embedding;
mod sppmi;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cooccur::{
    aggregate_parents, build_cooccurrence, read_cooccurrence, read_events, write_cooccurrence, write_events,
    BuildReport, CooccurrenceMatrix, Event,
};
pub use embedding::EmbeddingMatrix;
pub use sppmi::{sppmi, svd_embed, svd_factors, SppmiMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Diagnosis,
    Medication,
    Lab,
    Other,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagnosis" | "phecode" => Ok(Domain::Diagnosis),
            "medication" | "rxnorm" => Ok(Domain::Medication),
            "lab" | "loinc" => Ok(Domain::Lab),
            "other" | "" => Ok(Domain::Other),
            other => Err(Error::invalid(format!("unknown domain tag {other:?}"))),
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Domain::Diagnosis => "diagnosis",
            Domain::Medication => "medication",
            Domain::Lab => "lab",
            Domain::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Code {
    pub id: String,
    pub description: String,
    pub domain: Domain,
    pub sources: BTreeSet<String>,
}

/// The ordered code universe every matrix is indexed by.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeVocabulary {
    codes: Vec<Code>,
    index: BTreeMap<String, usize>,
}

impl CodeVocabulary {
    pub fn new(codes: Vec<Code>) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut codes = codes;
        for (i, code) in codes.iter_mut().enumerate() {
            if code.id.is_empty() {
                return Err(Error::invalid(format!("empty code id at position {i}")));
            }
            if code.description.trim().is_empty() {
                code.description = code.id.clone();
            }
            if index.insert(code.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate code id {:?}", code.id)));
            }
        }
        Ok(Self { codes, index })
    }

    /// Vocabulary of bare ids with placeholder descriptions.
    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let codes = ids
            .into_iter()
            .map(|id| {
                let id = id.into();
                Code {
                    description: id.clone(),
                    id,
                    domain: Domain::Other,
                    sources: BTreeSet::new(),
                }
            })
            .collect();
        Self::new(codes)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn code(&self, i: usize) -> &Code {
        &self.codes[i]
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.codes.iter().map(|c| c.id.as_str())
    }

    /// Reads `code_id,description,domain,sources` CSV; `sources` is
    /// `;`-separated.
    pub fn read_csv<R: Read>(reader: R, label: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let mut codes = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::data(label, line, e.to_string()))?;
            let id = rec.get(0).unwrap_or("").trim().to_string();
            if id.is_empty() {
                return Err(Error::data(label, line, "missing code_id"));
            }
            let description = rec.get(1).unwrap_or("").trim().to_string();
            let domain = rec
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|e: Error| Error::data(label, line, e.to_string()))?;
            let sources = rec
                .get(3)
                .unwrap_or("")
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            codes.push(Code {
                id,
                description,
                domain,
                sources,
            });
        }
        Self::new(codes)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["code_id", "description", "domain", "sources"])?;
        for c in &self.codes {
            let sources = c.sources.iter().cloned().collect::<Vec<_>>().join(";");
            wtr.write_record([
                c.id.as_str(),
                c.description.as_str(),
                &c.domain.to_string(),
                &sources,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Child code → parent code, used for aggregating part-level codes and as
/// known hierarchy supervision.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParentMap {
    edges: BTreeMap<String, String>,
}

impl ParentMap {
    pub fn new(edges: BTreeMap<String, String>) -> Result<Self> {
        let map = Self { edges };
        map.check_acyclic()?;
        Ok(map)
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut edges = BTreeMap::new();
        for (child, parent) in pairs {
            let child = child.into();
            let parent = parent.into();
            if let Some(prev) = edges.insert(child.clone(), parent.clone()) {
                if prev != parent {
                    return Err(Error::invalid(format!(
                        "code {child:?} has two parents ({prev:?}, {parent:?})"
                    )));
                }
            }
        }
        Self::new(edges)
    }

    fn check_acyclic(&self) -> Result<()> {
        for start in self.edges.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            seen.insert(cur);
            while let Some(p) = self.edges.get(cur) {
                if !seen.insert(p.as_str()) {
                    return Err(Error::invalid(format!("cycle in parent map through {p:?}")));
                }
                cur = p;
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn parent(&self, child: &str) -> Option<&str> {
        self.edges.get(child).map(String::as_str)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|(c, p)| (c.as_str(), p.as_str()))
    }

    pub fn children(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (c, p) in self.edges() {
            out.entry(p).or_default().push(c);
        }
        out
    }

    /// True if `anc` is a strict ancestor of `node`.
    pub fn is_ancestor(&self, anc: &str, node: &str) -> bool {
        let mut cur = node;
        while let Some(p) = self.parent(cur) {
            if p == anc {
                return true;
            }
            cur = p;
        }
        false
    }

    pub fn read_csv<R: Read>(reader: R, label: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut pairs = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::data(label, line, e.to_string()))?;
            match (rec.get(0), rec.get(1)) {
                (Some(c), Some(p)) if !c.trim().is_empty() && !p.trim().is_empty() => {
                    pairs.push((c.trim().to_string(), p.trim().to_string()))
                }
                _ => return Err(Error::data(label, line, "expected child_code_id,parent_code_id")),
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["child_code_id", "parent_code_id"])?;
        for (c, p) in self.edges() {
            wtr.write_record([c, p])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
