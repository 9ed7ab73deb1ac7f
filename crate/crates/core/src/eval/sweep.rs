//! Parameter sweeps over benchmark runs.
//!
//! Grid syntax: `key=v1,v2,...` terms joined by `;` form a cartesian
//! product; `simplex=STEP` expands to every `(alpha, beta, gamma)` on the
//! lattice with the given step that sums to 1.

use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, RunConfig};
use crate::dialogue::reasoner::Reasoner;
use crate::embed::Embeddings;
use crate::error::{Error, Result};
use crate::eval::harness::{
    fmt, run_benchmark, summary_fields, Aggregate, BenchOptions, BenchmarkRecord, SUMMARY_HEADER,
};
use crate::kg::KnowledgeGraph;

pub const SWEEP_KEYS: [&str; 6] = ["alpha", "beta", "gamma", "lambda_sem", "tau", "K"];

/// Assignments for one grid point, in column order.
pub type GridPoint = Vec<(String, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub columns: Vec<String>,
    pub points: Vec<GridPoint>,
}

fn bad(spec: &str, msg: &str) -> Error {
    Error::Config(format!("grid `{spec}`: {msg}"))
}

fn simplex(step: f64, spec: &str) -> Result<Vec<GridPoint>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(bad(spec, "simplex step must lie in (0, 1]"));
    }
    let n = (1.0 / step).round();
    if ((n * step) - 1.0).abs() > 1e-9 {
        return Err(bad(spec, "simplex step must divide 1"));
    }
    let n = n as u32;
    let mut out = Vec::new();
    for i in (0..=n).rev() {
        for j in (0..=n - i).rev() {
            let k = n - i - j;
            let v = |x: u32| (x as f64 / n as f64 * 1e12).round() / 1e12;
            out.push(vec![
                ("alpha".to_string(), v(i)),
                ("beta".to_string(), v(j)),
                ("gamma".to_string(), v(k)),
            ]);
        }
    }
    Ok(out)
}

impl Grid {
    pub fn parse(spec: &str) -> Result<Self> {
        let terms: Vec<&str> = spec
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect();
        if terms.is_empty() {
            return Err(bad(spec, "empty grid"));
        }
        let mut points: Vec<GridPoint> = vec![Vec::new()];
        let mut columns: Vec<String> = Vec::new();
        for term in terms {
            let (key, values) = term
                .split_once('=')
                .ok_or_else(|| bad(spec, "expected key=values"))?;
            let key = key.trim();
            let axis: Vec<GridPoint> = if key == "simplex" {
                let step: f64 = values
                    .trim()
                    .parse()
                    .map_err(|_| bad(spec, "simplex step must be a number"))?;
                simplex(step, spec)?
            } else {
                if !SWEEP_KEYS.contains(&key) {
                    return Err(bad(spec, &format!("cannot sweep `{key}`")));
                }
                values
                    .split(',')
                    .map(|v| {
                        let x: f64 = v
                            .trim()
                            .parse()
                            .map_err(|_| bad(spec, &format!("bad value `{}`", v.trim())))?;
                        Ok(vec![(key.to_string(), x)])
                    })
                    .collect::<Result<_>>()?
            };
            if axis.is_empty() {
                return Err(bad(spec, "axis has no values"));
            }
            for (k, _) in &axis[0] {
                if columns.contains(k) {
                    return Err(bad(spec, &format!("`{k}` appears twice")));
                }
                columns.push(k.clone());
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |a| {
                        let mut q = p.clone();
                        q.extend(a.iter().cloned());
                        q
                    })
                })
                .collect();
        }
        Ok(Self { columns, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `base` with one grid point applied.
pub fn apply_point(base: &EngineConfig, point: &GridPoint) -> Result<EngineConfig> {
    let mut rc = RunConfig {
        engine: base.clone(),
        ..RunConfig::default()
    };
    for (k, v) in point {
        let text = if k == "K" {
            if v.fract() != 0.0 || *v < 1.0 {
                return Err(Error::Config(format!(
                    "K must be a positive integer, got {v}"
                )));
            }
            format!("{}", *v as u64)
        } else {
            v.to_string()
        };
        rc.set(k, &text)?;
    }
    rc.engine.validate()?;
    Ok(rc.engine)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: GridPoint,
    pub aggregate: Aggregate,
}

/// One benchmark run per grid point, all with the same seed.
pub fn sweep(
    grid: &Grid,
    records: &[BenchmarkRecord],
    graph: &KnowledgeGraph,
    embeddings: &Embeddings,
    reasoner: &dyn Reasoner,
    base: &EngineConfig,
    options: &BenchOptions,
) -> Result<Vec<SweepRow>> {
    grid.points
        .iter()
        .map(|p| {
            let cfg = apply_point(base, p)?;
            let report = run_benchmark(records, graph, embeddings, reasoner, &cfg, options)?;
            Ok(SweepRow {
                point: p.clone(),
                aggregate: report.overall,
            })
        })
        .collect()
}

pub fn sweep_csv(grid: &Grid, rows: &[SweepRow]) -> String {
    let metrics = SUMMARY_HEADER.split_once(',').map_or("", |(_, rest)| rest);
    let mut s = grid.columns.join(",");
    s.push(',');
    s.push_str(metrics);
    s.push('\n');
    for r in rows {
        let values: Vec<String> = r.point.iter().map(|(_, v)| fmt(*v)).collect();
        s.push_str(&values.join(","));
        s.push(',');
        s.push_str(&summary_fields(&r.aggregate));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_axis() {
        let g = Grid::parse("tau=0.1,0.2,0.5").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.columns, vec!["tau"]);
        assert_eq!(g.points[1], vec![("tau".to_string(), 0.2)]);
    }

    #[test]
    fn simplex_count() {
        let g = Grid::parse("simplex=0.2").unwrap();
        assert_eq!(g.len(), 21);
        for p in &g.points {
            let s: f64 = p.iter().map(|(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert_eq!(Grid::parse("simplex=0.5").unwrap().len(), 6);
        assert_eq!(Grid::parse("simplex=1").unwrap().len(), 3);
    }

    #[test]
    fn product() {
        let g = Grid::parse("tau=0.1,0.2; K=10,20,30").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.columns, vec!["tau", "K"]);
    }

    #[test]
    fn malformed() {
        for bad in [
            "",
            "tau",
            "tau=",
            "tau=x",
            "bogus=1",
            "simplex=0.3",
            "simplex=0",
            "tau=1;tau=2",
            "simplex=0.5;alpha=1",
        ] {
            assert!(Grid::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn points_apply() {
        let base = EngineConfig::default();
        let c = apply_point(&base, &vec![("K".into(), 25.0), ("tau".into(), 0.5)]).unwrap();
        assert_eq!((c.budget.max_candidates, c.tau), (25, 0.5));
        assert!(apply_point(&base, &vec![("K".into(), 2.5)]).is_err());
        assert!(apply_point(&base, &vec![("tau".into(), 0.0)]).is_err());
    }
}
