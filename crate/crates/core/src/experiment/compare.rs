use std::fmt;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedRow {
    pub seed: u64,
    pub w2_a: f64,
    pub w2_b: f64,
}

/// Seed-by-seed W2 comparison of two experiment summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub method_a: String,
    pub method_b: String,
    pub rows: Vec<PairedRow>,
}

impl MethodComparison {
    /// Seeds on which `b` has W2 at most `a`'s.
    pub fn b_wins_or_ties(&self) -> usize {
        self.rows.iter().filter(|r| r.w2_b <= r.w2_a).count()
    }
}

impl fmt::Display for MethodComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed  w2[{}]  w2[{}]  diff",
            self.method_a, self.method_b
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4}  {:.5}  {:.5}  {:+.5}",
                r.seed,
                r.w2_a,
                r.w2_b,
                r.w2_b - r.w2_a
            )?;
        }
        writeln!(
            f,
            "{} at or below {} on {}/{} seeds",
            self.method_b,
            self.method_a,
            self.b_wins_or_ties(),
            self.rows.len()
        )
    }
}

fn seed_w2(summary: &Value) -> Result<Vec<(u64, f64)>> {
    let bad = || Error::Config("summary is missing seeds[].seed or seeds[].w2".into());
    summary["seeds"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .filter(|s| s["status"] == "ok")
        .map(|s| {
            Ok((
                s["seed"].as_u64().ok_or_else(bad)?,
                s["w2"].as_f64().ok_or_else(bad)?,
            ))
        })
        .collect()
}

/// Pairs two `summary.json` documents on their common seeds.
pub fn compare_methods(a: &str, b: &str) -> Result<MethodComparison> {
    let parse = |t: &str| {
        serde_json::from_str::<Value>(t).map_err(|e| Error::Config(format!("bad summary: {e}")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    let wb = seed_w2(&b)?;
    let rows = seed_w2(&a)?
        .into_iter()
        .filter_map(|(seed, w2_a)| {
            wb.iter()
                .find(|(s, _)| *s == seed)
                .map(|&(_, w2_b)| PairedRow { seed, w2_a, w2_b })
        })
        .collect();
    let name = |v: &Value| v["method"].as_str().unwrap_or("?").to_string();
    Ok(MethodComparison {
        method_a: name(&a),
        method_b: name(&b),
        rows,
    })
}
