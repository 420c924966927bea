//! Dataset loaders, train/test splits, folds and per-user subsampling.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::model::{Rating, RatingDataset, RatingScale};
use crate::rng::{self, Purpose};

/// Assigns dense indices to raw ids in order of first appearance.
#[derive(Debug, Default, Clone)]
pub struct IdMap {
    index: HashMap<String, usize>,
    raw: Vec<String>,
}

impl IdMap {
    pub fn get_or_insert(&mut self, raw: &str) -> usize {
        if let Some(&ix) = self.index.get(raw) {
            return ix;
        }
        let ix = self.raw.len();
        self.index.insert(raw.to_owned(), ix);
        self.raw.push(raw.to_owned());
        ix
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self, ix: usize) -> Option<&str> {
        self.raw.get(ix).map(String::as_str)
    }

    pub fn lookup(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }
}

/// A parsed dataset together with its id maps.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: RatingDataset,
    pub users: IdMap,
    pub items: IdMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `user \t item \t rating \t timestamp`
    MovieLens100k,
    /// `user::item::rating::timestamp`
    MovieLens1m,
    /// `user,item,rating` with that header line.
    Csv,
}

impl DatasetFormat {
    pub fn name(self) -> &'static str {
        match self {
            DatasetFormat::MovieLens100k => "ml100k",
            DatasetFormat::MovieLens1m => "ml1m",
            DatasetFormat::Csv => "csv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ml100k" | "ml-100k" => Some(DatasetFormat::MovieLens100k),
            "ml1m" | "ml-1m" => Some(DatasetFormat::MovieLens1m),
            "csv" => Some(DatasetFormat::Csv),
            _ => None,
        }
    }
}

fn parse_lines<'a>(
    path: &Path,
    lines: impl Iterator<Item = (usize, &'a str)>,
    split: impl Fn(&'a str) -> Vec<&'a str>,
    expected_fields: usize,
    scale: RatingScale,
) -> Result<Loaded> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if fields.len() != expected_fields {
            return Err(err(
                line_no,
                format!("expected {expected_fields} fields, found {}", fields.len()),
            ));
        }
        let (u, i) = (fields[0].trim(), fields[1].trim());
        if u.is_empty() || i.is_empty() {
            return Err(err(line_no, "empty user or item id".into()));
        }
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("invalid rating {:?}", fields[2])))?;
        if !scale.contains(value) {
            return Err(err(
                line_no,
                format!("rating {value} outside [{}, {}]", scale.min, scale.max),
            ));
        }
        let user = users.get_or_insert(u);
        let item = items.get_or_insert(i);
        if !seen.insert((user, item)) {
            return Err(err(line_no, format!("duplicate rating for ({u}, {i})")));
        }
        entries.push(Rating { user, item, value });
    }
    let dataset = RatingDataset::new(users.len(), items.len(), entries, scale)?;
    Ok(Loaded {
        dataset,
        users,
        items,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn movielens_scale() -> RatingScale {
    RatingScale { min: 1.0, max: 5.0 }
}

/// Parses MovieLens-100K `u.data` text. Scale is fixed to `[1, 5]`.
pub fn parse_movielens_100k(path: &Path, text: &str) -> Result<Loaded> {
    let lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    parse_lines(path, lines, |l| l.split('\t').collect(), 4, movielens_scale())
}

pub fn load_movielens_100k(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    parse_movielens_100k(path, &read(path)?)
}

pub fn parse_movielens_1m(path: &Path, text: &str) -> Result<Loaded> {
    let lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    parse_lines(path, lines, |l| l.split("::").collect(), 4, movielens_scale())
}

/// MovieLens-1M `ratings.dat`.
pub fn load_movielens_1m(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    parse_movielens_1m(path, &read(path)?)
}

pub fn parse_csv(path: &Path, text: &str, scale: RatingScale) -> Result<Loaded> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    match lines.find(|(_, l)| !l.trim().is_empty()) {
        None => {
            let dataset = RatingDataset::new(0, 0, Vec::new(), scale)?;
            return Ok(Loaded {
                dataset,
                users: IdMap::default(),
                items: IdMap::default(),
            });
        }
        Some((n, header)) => {
            let cols: Vec<&str> = header.split(',').map(str::trim).collect();
            if cols != ["user", "item", "rating"] {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: "expected header `user,item,rating`".into(),
                });
            }
        }
    }
    parse_lines(path, lines, |l| l.split(',').collect(), 3, scale)
}

/// Generic `user,item,rating` CSV on a declared scale.
pub fn load_csv(path: impl AsRef<Path>, scale_min: f64, scale_max: f64) -> Result<Loaded> {
    let path = path.as_ref();
    let scale = RatingScale::new(scale_min, scale_max)?;
    parse_csv(path, &read(path)?, scale)
}

pub fn load(path: impl AsRef<Path>, format: DatasetFormat, scale: RatingScale) -> Result<Loaded> {
    match format {
        DatasetFormat::MovieLens100k => load_movielens_100k(path),
        DatasetFormat::MovieLens1m => load_movielens_1m(path),
        DatasetFormat::Csv => load_csv(path, scale.min, scale.max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    LeaveNOut(usize),
    LeaveOneOut,
    Fold { index: usize, of: usize },
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitKind::LeaveNOut(n) => write!(f, "leave-{n}-out"),
            SplitKind::LeaveOneOut => write!(f, "leave-one-out"),
            SplitKind::Fold { index, of } => write!(f, "fold {}/{of}", index + 1),
        }
    }
}

/// Disjoint train/test partition of a source dataset. Both halves keep the
/// source's user and item index space.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub train: RatingDataset,
    pub test: RatingDataset,
    pub kind: SplitKind,
}

fn partition(dataset: &RatingDataset, is_test: &[bool], kind: SplitKind) -> SplitPlan {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, &t) in dataset.entries().iter().zip(is_test) {
        if t {
            test.push(*r);
        } else {
            train.push(*r);
        }
    }
    SplitPlan {
        train: RatingDataset::from_subset(dataset, train),
        test: RatingDataset::from_subset(dataset, test),
        kind,
    }
}

/// Per user with more than `n_test` ratings, `n_test` uniformly chosen
/// ratings go to test. Smaller users go entirely to train.
pub fn split_leave_n_out(dataset: &RatingDataset, n_test: usize, seed: u64) -> SplitPlan {
    let mut is_test = vec![false; dataset.len()];
    for (user, ixs) in dataset.indices_by_user().into_iter().enumerate() {
        if ixs.len() <= n_test {
            continue;
        }
        let mut s = rng::stream(seed, Purpose::Split, &[user as u64]);
        for pick in index::sample(&mut s, ixs.len(), n_test) {
            is_test[ixs[pick]] = true;
        }
    }
    partition(dataset, &is_test, SplitKind::LeaveNOut(n_test))
}

/// One test rating for every user with at least two ratings.
pub fn split_leave_one_out(dataset: &RatingDataset, seed: u64) -> SplitPlan {
    let mut plan = split_leave_n_out(dataset, 1, seed);
    plan.kind = SplitKind::LeaveOneOut;
    plan
}

/// `k` near-equal folds over a seeded shuffle of the entries; plan `f` uses
/// fold `f` as test and the rest as train.
pub fn kfold_splits(dataset: &RatingDataset, k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 {
        return Err(Error::usage("k-fold needs k >= 2"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Folds, &[]));
    let mut fold_of = vec![0usize; dataset.len()];
    for (pos, &ix) in order.iter().enumerate() {
        fold_of[ix] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let is_test: Vec<bool> = fold_of.iter().map(|&x| x == f).collect();
            partition(dataset, &is_test, SplitKind::Fold { index: f, of: k })
        })
        .collect())
}

/// Keeps `⌈fraction · count⌉` random ratings of every user.
pub fn subsample_per_user(
    dataset: &RatingDataset,
    fraction: f64,
    seed: u64,
) -> Result<RatingDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::usage(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut keep = vec![false; dataset.len()];
    for (user, ixs) in dataset.indices_by_user().into_iter().enumerate() {
        let n = ixs.len();
        let kept = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let kept = kept.min(n);
        let mut s = rng::stream(seed, Purpose::Subsample, &[user as u64]);
        for pick in index::sample(&mut s, n, kept) {
            keep[ixs[pick]] = true;
        }
    }
    let entries = dataset
        .entries()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| *r)
        .collect();
    Ok(RatingDataset::from_subset(dataset, entries))
}
