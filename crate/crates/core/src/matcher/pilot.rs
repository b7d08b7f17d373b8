use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::similarity::{cosine_similarity, EmbeddingDb};
use crate::corpus::IssueRef;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::llm::{EmbeddingVector, Gateway};
use crate::pattern::ContextAwareBugPattern;

pub const BIN_WIDTH: f64 = 0.05;
const BINS_PER_UNIT: i64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotTriplet {
    pub issue_ref: IssueRef,
    pub v_func: EmbeddingVector,
    pub v_context: EmbeddingVector,
    pub v_oracle: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// `index / 20`; the bin covers `[bin_low, (index + 1) / 20)`.
    pub index: i64,
    pub bin_low: f64,
    pub bin_high: f64,
    pub mean_y: f64,
    pub count: usize,
}

impl Bin {
    pub fn contains(&self, x: f64) -> bool {
        self.bin_low <= x && x < self.bin_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotResult {
    pub pairs: Vec<(f64, f64)>,
    pub bins: Vec<Bin>,
    pub pearson_r: f64,
    pub p_value: f64,
}

/// Index of the width-0.05 bin holding `x`, so that `i/20 <= x < (i+1)/20`.
pub(crate) fn bin_index(x: f64) -> i64 {
    let mut i = (x * BINS_PER_UNIT as f64).floor() as i64;
    // x * 20 can round across a boundary; settle against the exact edges.
    while (i as f64) / (BINS_PER_UNIT as f64) > x {
        i -= 1;
    }
    while ((i + 1) as f64) / (BINS_PER_UNIT as f64) <= x {
        i += 1;
    }
    i
}

/// Sample Pearson correlation. Errors when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::PearsonUndefined("fewer than two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::PearsonUndefined("x is constant"));
    }
    if syy == 0.0 {
        return Err(Error::PearsonUndefined("y is constant"));
    }
    // sqrt(a * a) == a exactly, so y = x gives r = 1.0 with no rounding.
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` over `n` points, t-distributed with n-2 df.
fn p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Correlates combined functional/context similarity with oracle
/// similarity over every ordered pair of distinct triplets.
pub fn pilot_analysis(triplets: &[PilotTriplet]) -> Result<PilotResult> {
    if triplets.len() < 3 {
        return Err(Error::InvalidRequest(format!(
            "pilot analysis needs at least 3 triplets, got {}",
            triplets.len()
        )));
    }
    let n = triplets.len();
    let mut pairs = Vec::with_capacity(n * (n - 1));
    for (i, a) in triplets.iter().enumerate() {
        for (j, b) in triplets.iter().enumerate() {
            if i == j {
                continue;
            }
            let x = 0.5 * cosine_similarity(&a.v_func, &b.v_func)?
                + 0.5 * cosine_similarity(&a.v_context, &b.v_context)?;
            let y = cosine_similarity(&a.v_oracle, &b.v_oracle)?;
            pairs.push((x, y));
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let r = pearson(&xs, &ys)?;
    Ok(PilotResult {
        bins: bin_means(&pairs),
        p_value: p_value(r, pairs.len()),
        pearson_r: r,
        pairs,
    })
}

/// Reads triplets from a JSONL file, one per line.
pub fn load_triplets(path: &Path) -> Result<Vec<PilotTriplet>> {
    Ok(jsonl::read(path)?.into_iter().map(|(_, t)| t).collect())
}

/// One triplet per pattern whose bug API has an embedding in `db`. The
/// context and oracle texts are embedded in a single batch.
pub fn build_triplets(
    patterns: &[ContextAwareBugPattern],
    db: &EmbeddingDb,
    gateway: &Gateway,
) -> Result<Vec<PilotTriplet>> {
    let usable: Vec<(&ContextAwareBugPattern, &EmbeddingVector)> = patterns
        .iter()
        .filter_map(|p| match db.get(&p.bug_api) {
            Some(v) => Some((p, v)),
            None => {
                log::warn!(
                    "{}: no embedding for {}; left out of the pilot",
                    p.source_issue,
                    p.bug_api
                );
                None
            }
        })
        .collect();
    if usable.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = usable
        .iter()
        .flat_map(|(p, _)| [p.triggering_context.clone(), p.oracle_design.clone()])
        .collect();
    let mut vectors = gateway.embed(&texts)?.into_iter();
    let mut out = Vec::with_capacity(usable.len());
    for (p, v_func) in usable {
        let (Some(v_context), Some(v_oracle)) = (vectors.next(), vectors.next()) else {
            return Err(Error::InvalidRequest(
                "embedding reply shorter than the batch".into(),
            ));
        };
        out.push(PilotTriplet {
            issue_ref: p.source_issue.clone(),
            v_func: v_func.clone(),
            v_context,
            v_oracle,
        });
    }
    Ok(out)
}

/// Only bins with at least one pair are listed, in ascending order.
pub(crate) fn bin_means(pairs: &[(f64, f64)]) -> Vec<Bin> {
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for &(x, y) in pairs {
        let e = acc.entry(bin_index(x)).or_insert((0.0, 0));
        e.0 += y;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(index, (sum, count))| Bin {
            index,
            bin_low: index as f64 / BINS_PER_UNIT as f64,
            bin_high: (index + 1) as f64 / BINS_PER_UNIT as f64,
            mean_y: sum / count as f64,
            count,
        })
        .collect()
}

impl PilotResult {
    pub fn write_pairs_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.pairs {
            let _ = writeln!(out, "{x},{y}");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let summary = serde_json::json!({
            "n_pairs": self.pairs.len(),
            "pearson_r": self.pearson_r,
            "p_value": self.p_value,
            "bin_width": BIN_WIDTH,
            "bins": self.bins,
        });
        let text = serde_json::to_string_pretty(&summary)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
