use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use rayon::prelude::*;

use super::{CodeVocabulary, ParentMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub patient_id: String,
    pub code_id: String,
    pub date: NaiveDate,
}

/// Reads a `patient_id,code_id,date` CSV with ISO-8601 dates. Malformed
/// lines are rejected with their 1-based line number.
pub fn read_events<R: Read>(reader: R, label: &str) -> Result<Vec<Event>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(label, 1, e.to_string()))?
        .clone();
    let expected = ["patient_id", "code_id", "date"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::data(label, 1, "expected header patient_id,code_id,date"));
    }
    let mut events = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::data(label, line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::data(label, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let patient_id = rec[0].trim();
        let code_id = rec[1].trim();
        if patient_id.is_empty() || code_id.is_empty() {
            return Err(Error::data(label, line, "empty patient_id or code_id"));
        }
        let date = NaiveDate::parse_from_str(rec[2].trim(), "%Y-%m-%d")
            .map_err(|e| Error::data(label, line, format!("bad date {:?}: {e}", &rec[2])))?;
        events.push(Event {
            patient_id: patient_id.to_string(),
            code_id: code_id.to_string(),
            date,
        });
    }
    Ok(events)
}

/// Writes events as a `patient_id,code_id,date` CSV.
pub fn write_events<W: std::io::Write>(events: &[Event], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "code_id", "date"])?;
    for e in events {
        w.write_record([e.patient_id.as_str(), e.code_id.as_str(), &e.date.format("%Y-%m-%d").to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sparse symmetric co-occurrence counts. Only the strict upper triangle
/// is stored; the diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    n: usize,
    counts: BTreeMap<(usize, usize), u64>,
    pub window_days: u32,
    pub source: String,
}

impl CooccurrenceMatrix {
    pub fn zeros(n: usize, window_days: u32, source: impl Into<String>) -> Self {
        Self {
            n,
            counts: BTreeMap::new(),
            window_days,
            source: source.into(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return 0;
        }
        let key = if i < j { (i, j) } else { (j, i) };
        self.counts.get(&key).copied().unwrap_or(0)
    }

    /// Adds `c` to the symmetric pair `(i, j)`; diagonal additions are ignored.
    pub fn add(&mut self, i: usize, j: usize, c: u64) {
        assert!(i < self.n && j < self.n, "index out of range");
        if i == j || c == 0 {
            return;
        }
        let key = if i < j { (i, j) } else { (j, i) };
        *self.counts.entry(key).or_insert(0) += c;
    }

    /// Nonzero upper-triangle entries in index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.counts.iter().map(|(&(i, j), &c)| (i, j, c))
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    /// Row sums C(i,·) of the full symmetric matrix.
    pub fn marginals(&self) -> Vec<u64> {
        let mut m = vec![0u64; self.n];
        for (i, j, c) in self.iter() {
            m[i] += c;
            m[j] += c;
        }
        m
    }

    /// Grand total C(·,·) over the full symmetric matrix.
    pub fn total(&self) -> u64 {
        self.marginals().iter().sum()
    }

    pub fn merge(&mut self, other: &CooccurrenceMatrix) {
        assert_eq!(self.n, other.n, "merging matrices of different size");
        for (i, j, c) in other.iter() {
            self.add(i, j, c);
        }
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut d = ndarray::Array2::zeros((self.n, self.n));
        for (i, j, c) in self.iter() {
            d[[i, j]] = c as f64;
            d[[j, i]] = c as f64;
        }
        d
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub events: usize,
    pub unknown_events: usize,
    pub unknown_codes: BTreeSet<String>,
}

/// Counts, per patient, every pair of events for distinct codes whose dates
/// are at most `window_days` apart. Each unordered pair of events counts once.
pub fn build_cooccurrence(
    vocab: &CodeVocabulary,
    events: &[Event],
    window_days: i64,
    source: &str,
) -> Result<(CooccurrenceMatrix, BuildReport)> {
    if window_days <= 0 {
        return Err(Error::invalid(format!("window_days must be positive, got {window_days}")));
    }
    let window = u32::try_from(window_days)
        .map_err(|_| Error::invalid(format!("window_days {window_days} too large")))?;
    let mut report = BuildReport {
        events: events.len(),
        ..Default::default()
    };
    let mut by_patient: BTreeMap<&str, Vec<(NaiveDate, usize)>> = BTreeMap::new();
    for ev in events {
        match vocab.index_of(&ev.code_id) {
            Some(idx) => by_patient
                .entry(ev.patient_id.as_str())
                .or_default()
                .push((ev.date, idx)),
            None => {
                report.unknown_events += 1;
                report.unknown_codes.insert(ev.code_id.clone());
            }
        }
    }
    if report.unknown_events > 0 {
        log::warn!(
            "{source}: skipped {} events with {} unknown codes",
            report.unknown_events,
            report.unknown_codes.len()
        );
    }

    let n = vocab.len();
    let shards: Vec<Vec<(NaiveDate, usize)>> = by_patient.into_values().collect();
    let partials: Vec<CooccurrenceMatrix> = shards
        .into_par_iter()
        .map(|mut evs| {
            evs.sort();
            let mut m = CooccurrenceMatrix::zeros(n, window, source);
            for a in 0..evs.len() {
                let (da, ia) = evs[a];
                for &(db, ib) in &evs[a + 1..] {
                    if (db - da).num_days() > window_days {
                        break;
                    }
                    m.add(ia, ib, 1);
                }
            }
            m
        })
        .collect();
    let mut out = CooccurrenceMatrix::zeros(n, window, source);
    for p in &partials {
        out.merge(p);
    }
    Ok((out, report))
}

/// Replaces the row and column of every parent code with the element-wise sum
/// of its descendants' rows and columns. Pairs in an ancestor/descendant
/// relation are left at zero; rows of non-parent codes are unchanged outside
/// the parent columns.
pub fn aggregate_parents(
    cooc: &CooccurrenceMatrix,
    vocab: &CodeVocabulary,
    map: &ParentMap,
) -> Result<CooccurrenceMatrix> {
    if map.is_empty() {
        return Ok(cooc.clone());
    }
    let n = cooc.size();
    let mut parent_of = vec![None; n];
    for (c, p) in map.edges() {
        let ci = vocab
            .index_of(c)
            .ok_or_else(|| Error::invalid(format!("parent map child {c:?} not in vocabulary")))?;
        let pi = vocab
            .index_of(p)
            .ok_or_else(|| Error::invalid(format!("parent map parent {p:?} not in vocabulary")))?;
        parent_of[ci] = Some(pi);
    }
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, p) in parent_of.iter().enumerate() {
        if let Some(p) = *p {
            children[p].push(c);
        }
    }
    let is_parent: Vec<bool> = children.iter().map(|c| !c.is_empty()).collect();
    let descendants = |root: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = children[root].clone();
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend_from_slice(&children[v]);
        }
        out.sort_unstable();
        out
    };
    let related = |a: usize, b: usize| -> bool {
        let up = |mut x: usize, target: usize| {
            while let Some(p) = parent_of[x] {
                if p == target {
                    return true;
                }
                x = p;
            }
            false
        };
        up(a, b) || up(b, a)
    };

    // original sparse rows
    let mut rows: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
    for (i, j, c) in cooc.iter() {
        rows[i].insert(j, c);
        rows[j].insert(i, c);
    }
    let parents: Vec<usize> = (0..n).filter(|&v| is_parent[v]).collect();
    let desc: BTreeMap<usize, Vec<usize>> = parents.iter().map(|&p| (p, descendants(p))).collect();
    // summed original row of every parent's descendant set
    let summed: BTreeMap<usize, BTreeMap<usize, u64>> = desc
        .iter()
        .map(|(&p, ds)| {
            let mut acc: BTreeMap<usize, u64> = BTreeMap::new();
            for &d in ds {
                for (&x, &c) in &rows[d] {
                    *acc.entry(x).or_insert(0) += c;
                }
            }
            (p, acc)
        })
        .collect();

    let mut out = CooccurrenceMatrix::zeros(n, cooc.window_days, cooc.source.clone());
    for (i, j, c) in cooc.iter() {
        if !is_parent[i] && !is_parent[j] {
            out.add(i, j, c);
        }
    }
    for (&p, acc) in &summed {
        for (&x, &c) in acc {
            if !is_parent[x] && x != p && !related(p, x) {
                out.add(p, x, c);
            }
        }
        for &q in parents.iter().filter(|&&q| q > p) {
            if related(p, q) {
                continue;
            }
            let c: u64 = desc[&q].iter().map(|b| acc.get(b).copied().unwrap_or(0)).sum();
            out.add(p, q, c);
        }
    }
    Ok(out)
}

/// Reads `code_i,code_j,count` triplets. Pairs may appear in either
/// orientation; repeated pairs are summed.
pub fn read_cooccurrence<R: Read>(
    reader: R,
    label: &str,
    vocab: &CodeVocabulary,
    window_days: u32,
    source: &str,
) -> Result<CooccurrenceMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut m = CooccurrenceMatrix::zeros(vocab.len(), window_days, source);
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::data(label, line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::data(label, line, "expected code_i,code_j,count"));
        }
        let lookup = |s: &str| {
            vocab
                .index_of(s.trim())
                .ok_or_else(|| Error::data(label, line, format!("unknown code {s:?}")))
        };
        let i = lookup(&rec[0])?;
        let j = lookup(&rec[1])?;
        let c: u64 = rec[2]
            .trim()
            .parse()
            .map_err(|e| Error::data(label, line, format!("bad count: {e}")))?;
        m.add(i, j, c);
    }
    Ok(m)
}

pub fn write_cooccurrence<W: std::io::Write>(
    m: &CooccurrenceMatrix,
    vocab: &CodeVocabulary,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["code_i", "code_j", "count"])?;
    for (i, j, c) in m.iter() {
        wtr.write_record([vocab.code(i).id.as_str(), vocab.code(j).id.as_str(), &c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
