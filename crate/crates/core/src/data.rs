//! Interaction logs, item feature vectors and train/validation/test splits.
//!
//! Interactions are tab-separated `user \t item \t rating [\t timestamp]`
//! lines. Ratings at or above the threshold become positives; the rest are
//! kept as observed negatives. External ids are mapped to dense indices in
//! first-appearance order.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use thiserror::Error;

use crate::rng::{substream, STREAM_SPLIT};

/// (user index, item index).
pub type Pair = (usize, usize);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("{0} contains no records")]
    Empty(String),

    #[error("item `{0}` has no feature vector")]
    MissingFeature(String),

    #[error("line {line}: expected {expected} feature columns, found {found}")]
    FeatureDim {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("unreachable SKEW target: test fraction {target} exceeds what cap {cap} allows ({max})")]
    UnreachableTarget { target: f64, cap: f64, max: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

impl InteractionRecord {
    /// Parses one TSV line; `line_no` is only used for error messages.
    pub fn parse(line: &str, line_no: usize) -> Result<Self, DataError> {
        let malformed = |reason: String| DataError::Malformed {
            line: line_no,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(malformed(format!(
                "expected 3 or 4 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let user_id = cols[0].trim();
        let item_id = cols[1].trim();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(malformed("empty user or item id".into()));
        }
        let rating: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("rating `{}` is not a number", cols[2])))?;
        if !rating.is_finite() {
            return Err(malformed(format!("rating `{}` is not finite", cols[2])));
        }
        let timestamp = match cols.get(3).map(|s| s.trim()) {
            None | Some("") => None,
            Some(t) => Some(
                t.parse::<i64>()
                    .map_err(|_| malformed(format!("timestamp `{t}` is not an integer")))?,
            ),
        };
        Ok(InteractionRecord {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rating,
            timestamp,
        })
    }
}

/// Dense index over external string ids, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut map = IdMap::default();
        for id in ids {
            map.get_or_insert(&id);
        }
        map
    }

    fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Indexed user/item feedback with binarised labels.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    users: IdMap,
    items: IdMap,
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
}

impl InteractionTable {
    /// A pair that shows up both above and below the threshold is kept as a positive.
    pub fn from_records<'a, I>(records: I, threshold: f64) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = &'a InteractionRecord>,
    {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let mut pos: Vec<Vec<usize>> = Vec::new();
        let mut neg: Vec<Vec<usize>> = Vec::new();
        for r in records {
            let u = users.get_or_insert(&r.user_id);
            let v = items.get_or_insert(&r.item_id);
            if u == pos.len() {
                pos.push(Vec::new());
                neg.push(Vec::new());
            }
            if r.rating >= threshold {
                pos[u].push(v);
            } else {
                neg[u].push(v);
            }
        }
        if users.is_empty() {
            return Err(DataError::Empty("interaction log".into()));
        }
        for (p, n) in pos.iter_mut().zip(neg.iter_mut()) {
            p.sort_unstable();
            p.dedup();
            n.sort_unstable();
            n.dedup();
            n.retain(|v| p.binary_search(v).is_err());
        }
        Ok(InteractionTable {
            users,
            items,
            positives: pos,
            negatives: neg,
        })
    }

    /// Table over `n_users` x `n_items` with generated ids `u{i}` / `i{j}`.
    pub fn from_positive_pairs(
        n_users: usize,
        n_items: usize,
        pairs: &[Pair],
    ) -> Result<Self, DataError> {
        if n_users == 0 || n_items == 0 {
            return Err(DataError::Empty("synthetic table".into()));
        }
        let users = IdMap::from_ids((0..n_users).map(|u| format!("u{u}")));
        let items = IdMap::from_ids((0..n_items).map(|v| format!("i{v}")));
        let mut positives = vec![Vec::new(); n_users];
        for &(u, v) in pairs {
            if u >= n_users || v >= n_items {
                return Err(DataError::InvalidSplit(format!(
                    "pair ({u}, {v}) outside {n_users}x{n_items}"
                )));
            }
            positives[u].push(v);
        }
        for p in &mut positives {
            p.sort_unstable();
            p.dedup();
        }
        Ok(InteractionTable {
            users,
            items,
            positives,
            negatives: vec![Vec::new(); n_users],
        })
    }

    /// Same id maps, positives replaced by `pairs` (e.g. the train side of a split).
    pub fn with_positives(&self, pairs: &[Pair]) -> Self {
        let mut positives = vec![Vec::new(); self.n_users()];
        for &(u, v) in pairs {
            positives[u].push(v);
        }
        for p in &mut positives {
            p.sort_unstable();
            p.dedup();
        }
        InteractionTable {
            users: self.users.clone(),
            items: self.items.clone(),
            positives,
            negatives: self.negatives.clone(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    /// Sorted positive item indices of `u`.
    pub fn positives(&self, u: usize) -> &[usize] {
        &self.positives[u]
    }

    pub fn negatives_observed(&self, u: usize) -> &[usize] {
        &self.negatives[u]
    }

    pub fn is_positive(&self, u: usize, v: usize) -> bool {
        self.positives[u].binary_search(&v).is_ok()
    }

    pub fn n_positives(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    /// All positive pairs, ordered by user then item.
    pub fn positive_pairs(&self) -> Vec<Pair> {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
            .collect()
    }

    /// Number of positive interactions per item.
    pub fn item_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items()];
        for vs in &self.positives {
            for &v in vs {
                counts[v] += 1;
            }
        }
        counts
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for u in 0..self.n_users() {
            for &v in &self.positives[u] {
                out.push_str(&format!("{}\t{}\t5\n", self.users.id(u), self.items.id(v)));
            }
            for &v in &self.negatives[u] {
                out.push_str(&format!("{}\t{}\t1\n", self.users.id(u), self.items.id(v)));
            }
        }
        fs::write(path, out).map_err(|e| io_err(path, e))
    }
}

pub fn parse_interactions<R: BufRead>(
    reader: R,
    threshold: f64,
) -> Result<InteractionTable, DataError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        records.push(InteractionRecord::parse(line, i + 1)?);
    }
    if records.is_empty() {
        return Err(DataError::Empty("interaction file".into()));
    }
    InteractionTable::from_records(&records, threshold)
}

pub fn load_interactions(path: &Path, threshold: f64) -> Result<InteractionTable, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_interactions(BufReader::new(file), threshold)
}

/// One fixed-length feature vector per item (the mediator).
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatureTable {
    values: Array2<f64>,
}

impl ItemFeatureTable {
    pub fn new(values: Array2<f64>) -> Result<Self, DataError> {
        if values.ncols() == 0 {
            return Err(DataError::InvalidSplit("feature dimension must be positive".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(DataError::Malformed {
                line: 0,
                reason: "non-finite feature component".into(),
            });
        }
        Ok(ItemFeatureTable { values })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, v: usize) -> ArrayView1<'_, f64> {
        self.values.row(v)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn write_tsv(&self, path: &Path, table: &InteractionTable) -> Result<(), DataError> {
        let mut out = String::new();
        for v in 0..self.n_items() {
            out.push_str(table.items().id(v));
            for x in self.row(v) {
                out.push('\t');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| io_err(path, e))
    }
}

pub fn parse_item_features<R: BufRead>(
    reader: R,
    table: &InteractionTable,
) -> Result<ItemFeatureTable, DataError> {
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; table.n_items()];
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or("").trim();
        let vals = cols
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| DataError::Malformed {
                        line: line_no,
                        reason: format!("feature value `{c}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        match dim {
            None if vals.is_empty() => {
                return Err(DataError::FeatureDim {
                    line: line_no,
                    expected: 1,
                    found: 0,
                })
            }
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(DataError::FeatureDim {
                    line: line_no,
                    expected: d,
                    found: vals.len(),
                })
            }
            _ => {}
        }
        if let Some(v) = table.items().index_of(id) {
            if rows[v].is_some() {
                return Err(DataError::Malformed {
                    line: line_no,
                    reason: format!("duplicate feature row for item `{id}`"),
                });
            }
            rows[v] = Some(vals);
        }
    }
    let dim = dim.ok_or_else(|| DataError::Empty("feature file".into()))?;
    let mut values = Array2::zeros((table.n_items(), dim));
    for (v, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| DataError::MissingFeature(table.items().id(v).to_string()))?;
        values.row_mut(v).assign(&ArrayView1::from(&row[..]));
    }
    ItemFeatureTable::new(values)
}

pub fn load_item_features(
    path: &Path,
    table: &InteractionTable,
) -> Result<ItemFeatureTable, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_item_features(BufReader::new(file), table)
}

/// Train/validation/test assignment of positive pairs.
///
/// `dropped` holds validation/test pairs of users left without any train
/// positive; together the four lists partition the input positives.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitResult {
    pub train: Vec<Pair>,
    pub validation: Vec<Pair>,
    pub test: Vec<Pair>,
    pub dropped: Vec<Pair>,
}

impl SplitResult {
    /// Moves validation/test pairs of users without train positives to `dropped`.
    pub fn prune_cold_users(mut self, n_users: usize) -> Self {
        let mut has_train = vec![false; n_users];
        for &(u, _) in &self.train {
            has_train[u] = true;
        }
        let mut dropped = std::mem::take(&mut self.dropped);
        let mut keep = |pairs: Vec<Pair>| -> Vec<Pair> {
            let (kept, gone): (Vec<Pair>, Vec<Pair>) =
                pairs.into_iter().partition(|&(u, _)| has_train[u]);
            dropped.extend(gone);
            kept
        };
        self.validation = keep(std::mem::take(&mut self.validation));
        self.test = keep(std::mem::take(&mut self.test));
        self.dropped = dropped;
        self
    }

    /// Checks the four lists are disjoint and cover exactly the table's positives.
    pub fn is_partition_of(&self, table: &InteractionTable) -> bool {
        let mut all: Vec<Pair> = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .chain(&self.dropped)
            .copied()
            .collect();
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        n == all.len() && all == table.positive_pairs()
    }

    /// Distinct items per user for one side of the split, sorted.
    pub fn by_user(pairs: &[Pair], n_users: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_users];
        for &(u, v) in pairs {
            out[u].push(v);
        }
        for vs in &mut out {
            vs.sort_unstable();
            vs.dedup();
        }
        out
    }

    pub fn write_tsv(&self, dir: &Path, table: &InteractionTable) -> Result<(), DataError> {
        write_pairs(&dir.join("train.tsv"), table, &self.train)?;
        write_pairs(&dir.join("validation.tsv"), table, &self.validation)?;
        write_pairs(&dir.join("test.tsv"), table, &self.test)
    }

    pub fn read_tsv(dir: &Path, table: &InteractionTable) -> Result<Self, DataError> {
        Ok(SplitResult {
            train: read_pairs(&dir.join("train.tsv"), table)?,
            validation: read_pairs(&dir.join("validation.tsv"), table)?,
            test: read_pairs(&dir.join("test.tsv"), table)?,
            dropped: Vec::new(),
        })
    }
}

pub fn write_pairs(path: &Path, table: &InteractionTable, pairs: &[Pair]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = String::with_capacity(pairs.len() * 12);
    for &(u, v) in pairs {
        out.push_str(table.users().id(u));
        out.push('\t');
        out.push_str(table.items().id(v));
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_pairs(path: &Path, table: &InteractionTable) -> Result<Vec<Pair>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(uid), Some(vid), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(DataError::Malformed {
                line: i + 1,
                reason: "expected `user \\t item`".into(),
            });
        };
        let u = table.users().index_of(uid.trim()).ok_or_else(|| DataError::UnknownId {
            kind: "user",
            id: uid.to_string(),
        })?;
        let v = table.items().index_of(vid.trim()).ok_or_else(|| DataError::UnknownId {
            kind: "item",
            id: vid.to_string(),
        })?;
        pairs.push((u, v));
    }
    Ok(pairs)
}

/// RAND split: every positive pair is assigned independently by one uniform draw.
pub fn rand_split(
    table: &InteractionTable,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitResult, DataError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(DataError::InvalidSplit(format!(
            "fractions must be non-negative, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidSplit(format!(
            "fractions must sum to 1, got {total}"
        )));
    }
    let mut rng = substream(seed, STREAM_SPLIT, 0);
    let mut split = SplitResult::default();
    let train_cut = fractions[0];
    let val_cut = fractions[0] + fractions[1];
    for pair in table.positive_pairs() {
        let x: f64 = rng.random();
        if x < train_cut {
            split.train.push(pair);
        } else if x < val_cut {
            split.validation.push(pair);
        } else {
            split.test.push(pair);
        }
    }
    Ok(split.prune_cold_users(table.n_users()))
}

/// SKEW split: test inclusion inversely proportional to item popularity.
#[derive(Debug, Clone)]
pub struct SkewSplitter {
    popularity: Vec<usize>,
    probabilities: Vec<f64>,
    alpha: f64,
    cap: f64,
}

/// Share of the non-test remainder that goes to train (7:1 train/validation).
const SKEW_TRAIN_SHARE: f64 = 7.0 / 8.0;

impl SkewSplitter {
    /// `target_test_fraction = None` keeps the raw `c_min / c_v` ratio (alpha = 1).
    pub fn new(
        table: &InteractionTable,
        target_test_fraction: Option<f64>,
        cap: f64,
    ) -> Result<Self, DataError> {
        if !(cap > 0.0 && cap <= 1.0) {
            return Err(DataError::InvalidSplit(format!("cap must lie in (0, 1], got {cap}")));
        }
        let popularity = table.item_popularity();
        let total: usize = popularity.iter().sum();
        let c_min = popularity.iter().copied().filter(|&c| c > 0).min().ok_or_else(|| {
            DataError::Empty("positive interactions".into())
        })? as f64;

        let alpha = match target_test_fraction {
            None => 1.0,
            Some(t) => {
                if !(t > 0.0 && t < 1.0) {
                    return Err(DataError::InvalidSplit(format!(
                        "target test fraction must lie in (0, 1), got {t}"
                    )));
                }
                if t > cap {
                    return Err(DataError::UnreachableTarget {
                        target: t,
                        cap,
                        max: cap,
                    });
                }
                let target = t * total as f64;
                let expected = |alpha: f64| -> f64 {
                    popularity
                        .iter()
                        .filter(|&&c| c > 0)
                        .map(|&c| (alpha * c_min).min(cap * c as f64))
                        .sum()
                };
                // expected() is continuous and non-decreasing; it saturates at
                // cap * total once alpha reaches cap * c_max / c_min.
                let c_max = *popularity.iter().max().unwrap_or(&0) as f64;
                let (mut lo, mut hi) = (0.0, cap * c_max / c_min);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if expected(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        };
        let probabilities = popularity
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    (alpha * c_min / c as f64).min(cap)
                }
            })
            .collect();
        Ok(SkewSplitter {
            popularity,
            probabilities,
            alpha,
            cap,
        })
    }

    /// Per-item probability of a positive pair landing in test.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn popularity(&self) -> &[usize] {
        &self.popularity
    }

    /// Raw assignment, before cold users are pruned.
    pub fn assign(&self, table: &InteractionTable, seed: u64) -> SplitResult {
        let mut rng = substream(seed, STREAM_SPLIT, 1);
        let mut split = SplitResult::default();
        for (u, v) in table.positive_pairs() {
            let to_test = rng.random::<f64>() < self.probabilities[v];
            let to_train = rng.random::<f64>() < SKEW_TRAIN_SHARE;
            if to_test {
                split.test.push((u, v));
            } else if to_train {
                split.train.push((u, v));
            } else {
                split.validation.push((u, v));
            }
        }
        split
    }
}

pub fn skew_split(
    table: &InteractionTable,
    target_test_fraction: Option<f64>,
    cap: f64,
    seed: u64,
) -> Result<SplitResult, DataError> {
    let splitter = SkewSplitter::new(table, target_test_fraction, cap)?;
    Ok(splitter.assign(table, seed).prune_cold_users(table.n_users()))
}
