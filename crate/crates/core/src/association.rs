//! Behavior association matrix.
//!
//! For every appliance pair the start-ups of the two appliances are matched
//! one-to-one, nearest first, among pairs no further apart than the candidate
//! window `T_s`. With `N^s` the number of matched pairs, `N^e` the number of
//! those within the target window `T_e`, `N^d_ij` the number of days on which
//! both appliances start at least once and `N^d` the total day count,
//!
//! ```text
//! q_ij = (N^e_ij / N^s_ij) * (N^d_ij / N^d)        (0/0 taken as 0)
//! ```
//!
//! and the diagonal is zero. Matching candidates are ordered by
//! `(|t_i - t_j|, min(t_i, t_j), max(t_i, t_j))`; the key does not depend on
//! which appliance is called `i`, so the counts and the matrix are exactly
//! symmetric.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventStream;

pub const DEFAULT_TARGET_WINDOW: i64 = 30 * 60;
pub const DEFAULT_CANDIDATE_WINDOW: i64 = 24 * 3600;

/// Association windows, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// `T_e`: the co-activation window that counts as associated.
    pub target_window: i64,
    /// `T_s`: the window within which a pair is a valid candidate.
    pub candidate_window: i64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            target_window: DEFAULT_TARGET_WINDOW,
            candidate_window: DEFAULT_CANDIDATE_WINDOW,
        }
    }
}

impl AssociationConfig {
    pub fn new(target_window: i64, candidate_window: i64) -> Result<Self> {
        let cfg = AssociationConfig {
            target_window,
            candidate_window,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.target_window && self.target_window < self.candidate_window) {
            return Err(Error::Config(format!(
                "need 0 < T_e < T_s, got T_e = {} s, T_s = {} s",
                self.target_window, self.candidate_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    /// Matched start-up pairs within `T_e`.
    pub n_e: u64,
    /// Matched start-up pairs within `T_s`.
    pub n_s: u64,
    /// Days on which both appliances start at least once.
    pub n_d: u64,
}

/// A matched start-up pair: indices into the two start-up lists and `|Δt|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub gap: i64,
}

/// Greedy one-to-one nearest matching of two sorted start-up lists, keeping
/// only pairs with `|Δt| <= window`.
pub fn match_startups(a: &[i64], b: &[i64], window: i64) -> Vec<Match> {
    let mut candidates: Vec<(i64, i64, i64, usize, usize)> = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let lo = b.partition_point(|&tb| tb < ta - window);
        for (j, &tb) in b.iter().enumerate().skip(lo) {
            if tb > ta + window {
                break;
            }
            candidates.push(((ta - tb).abs(), ta.min(tb), ta.max(tb), i, j));
        }
    }
    // Equal keys can only come from disjoint pairs, so their relative order
    // does not change the outcome.
    candidates.sort_unstable_by_key(|c| (c.0, c.1, c.2));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (gap, _, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push(Match { i, j, gap });
        }
    }
    out
}

fn startup_days(s: &EventStream) -> BTreeSet<i64> {
    s.startups.iter().map(|t| s.grid.day_of(*t)).collect()
}

/// Co-activation counters for one appliance pair.
pub fn count_pair(a: &EventStream, b: &EventStream, cfg: &AssociationConfig) -> Result<PairCounts> {
    if a.grid != b.grid {
        return Err(Error::Shape(format!(
            "event streams {} and {} are on different grids",
            a.appliance_id, b.appliance_id
        )));
    }
    let matches = match_startups(&a.startups, &b.startups, cfg.candidate_window);
    let n_e = matches.iter().filter(|m| m.gap <= cfg.target_window).count() as u64;
    let n_d = startup_days(a).intersection(&startup_days(b)).count() as u64;
    Ok(PairCounts {
        n_e,
        n_s: matches.len() as u64,
        n_d,
    })
}

/// `q = (n_e / n_s) * (n_d / days)`, with `0/0 = 0`.
pub fn association_value(c: PairCounts, days: u64) -> f64 {
    if c.n_s == 0 {
        return 0.0;
    }
    (c.n_e as f64 / c.n_s as f64) * (c.n_d as f64 / days as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    pub ids: Vec<String>,
    pub q: Vec<Vec<f64>>,
    pub counts: Vec<Vec<PairCounts>>,
    /// Global day count `N^d`.
    pub days: u64,
    pub config: AssociationConfig,
}

impl AssociationMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Matrix built directly from association values, without counters.
    pub fn from_values(ids: Vec<String>, q: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if q.len() != n || q.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("association matrix must be {n}x{n}")));
        }
        Ok(AssociationMatrix {
            ids,
            q,
            counts: vec![vec![PairCounts::default(); n]; n],
            days: 1,
            config: AssociationConfig::default(),
        })
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| (0..self.len()).all(|j| self.q[i][j] == self.q[j][i]))
    }
}

/// Association matrix over all pairs of `streams` (in the given order).
pub fn association_matrix(
    streams: &[EventStream],
    cfg: &AssociationConfig,
    days: u64,
) -> Result<AssociationMatrix> {
    cfg.validate()?;
    if days == 0 {
        return Err(Error::Data("total day count N^d must be >= 1".into()));
    }
    if streams.len() < 2 {
        return Err(Error::Data(format!(
            "association needs at least 2 appliances, got {}",
            streams.len()
        )));
    }
    let n = streams.len();
    let mut q = vec![vec![0.0; n]; n];
    let mut counts = vec![vec![PairCounts::default(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = count_pair(&streams[i], &streams[j], cfg)?;
            if c.n_d > days {
                return Err(Error::Data(format!(
                    "{} and {} share {} active days but N^d = {days}",
                    streams[i].appliance_id, streams[j].appliance_id, c.n_d
                )));
            }
            let v = association_value(c, days);
            q[i][j] = v;
            q[j][i] = v;
            counts[i][j] = c;
            counts[j][i] = c;
        }
    }
    Ok(AssociationMatrix {
        ids: streams.iter().map(|s| s.appliance_id.clone()).collect(),
        q,
        counts,
        days,
        config: *cfg,
    })
}

#[derive(Serialize, Deserialize)]
struct CountersFile {
    ids: Vec<String>,
    days: u64,
    config: AssociationConfig,
    n_e: Vec<Vec<u64>>,
    n_s: Vec<Vec<u64>>,
    n_d: Vec<Vec<u64>>,
}

fn counters_path(q_path: &Path) -> std::path::PathBuf {
    q_path.with_extension("counters.json")
}

/// Write `q` as a square CSV with channel codes on the first row and column,
/// plus a `<stem>.counters.json` sidecar.
pub fn write_matrix(path: &Path, m: &AssociationMatrix) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec![String::new()];
    header.extend(m.ids.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, row) in m.ids.iter().zip(&m.q) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let pick = |f: fn(&PairCounts) -> u64| -> Vec<Vec<u64>> {
        m.counts.iter().map(|r| r.iter().map(f).collect()).collect()
    };
    let side = CountersFile {
        ids: m.ids.clone(),
        days: m.days,
        config: m.config,
        n_e: pick(|c| c.n_e),
        n_s: pick(|c| c.n_s),
        n_d: pick(|c| c.n_d),
    };
    let cpath = counters_path(path);
    let text = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&cpath, e))?;
    fs::write(&cpath, text + "\n").map_err(|e| Error::io(&cpath, e))
}

/// Read a matrix CSV; counters are loaded from the sidecar when present.
pub fn read_matrix(path: &Path) -> Result<AssociationMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let ids: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut q = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.get(0) != ids.get(i).map(String::as_str) {
            return Err(Error::Data(format!("{}: row {i} label does not match header", path.display())));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("{}: row {i}: {e}", path.display())))?;
        q.push(row);
    }
    let mut m = AssociationMatrix::from_values(ids, q)?;
    let cpath = counters_path(path);
    if cpath.exists() {
        let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
        let side: CountersFile = serde_json::from_str(&text).map_err(|e| Error::json(&cpath, e))?;
        if side.ids != m.ids {
            return Err(Error::Data("counters sidecar lists different channels".into()));
        }
        m.days = side.days;
        m.config = side.config;
        let n = m.len();
        for i in 0..n {
            for j in 0..n {
                m.counts[i][j] = PairCounts {
                    n_e: side.n_e[i][j],
                    n_s: side.n_s[i][j],
                    n_d: side.n_d[i][j],
                };
            }
        }
    }
    Ok(m)
}
