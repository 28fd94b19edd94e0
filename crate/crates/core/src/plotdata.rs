//! Aggregation of result rows into plot-ready tables.
//!
//! Works from the results CSV alone, so figures can be rebuilt offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::Serialize;

use crate::experiment::ExperimentError;
use crate::mac::{AccessMethod, ContentionWindow};
use crate::scenario::CaseAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    /// Unsatisfied ratio against vehicle count, symmetric case, CW 15.
    Fig2,
    /// Unsatisfied ratio against CW, symmetric case, 100 vehicles.
    Fig3,
    /// Unsatisfied ratio against vehicle count, asymmetric case, CW 15.
    Fig4,
    /// 802.11n bonding against vehicle count per CW, both cases.
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5];

    pub fn as_str(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown figure `{s}` (expected fig2, fig3, fig4 or fig5)"))
    }
}

/// The columns of a results row that the figures use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultPoint {
    pub method: AccessMethod,
    pub case: CaseAssignment,
    pub cw: u32,
    pub n_vehicles: u32,
    pub seed: u64,
    pub max_unsatisfied_ratio: f64,
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultPoint>, ExperimentError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExperimentError::Results(format!("missing column `{name}`")))
    };
    let (method, case, cw, n, seed, ratio) =
        (col("method")?, col("case")?, col("cw")?, col("n_vehicles")?, col("seed")?, col("max_unsatisfied_ratio")?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| ExperimentError::Results(format!("row {}: bad {what}", line + 1));
        let field = |i: usize| rec.get(i).unwrap_or_default();
        out.push(ResultPoint {
            method: field(method).parse().map_err(|_| bad("method"))?,
            case: field(case).parse().map_err(|_| bad("case"))?,
            cw: field(cw).parse().map_err(|_| bad("cw"))?,
            n_vehicles: field(n).parse().map_err(|_| bad("n_vehicles"))?,
            seed: field(seed).parse().map_err(|_| bad("seed"))?,
            max_unsatisfied_ratio: field(ratio).parse().map_err(|_| bad("max_unsatisfied_ratio"))?,
        });
    }
    Ok(out)
}

/// One aggregated point of a figure series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub figure: &'static str,
    pub case: CaseAssignment,
    pub method: AccessMethod,
    pub cw: u32,
    /// Vehicle count, or CW for the CW sweep.
    pub x: u32,
    pub mean: f64,
    /// Sample standard deviation over seeds; zero for a single seed.
    pub std: f64,
    pub seeds: usize,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn method_index(m: AccessMethod) -> usize {
    AccessMethod::ALL.iter().position(|&x| x == m).expect("known method")
}

fn case_index(c: CaseAssignment) -> usize {
    match c {
        CaseAssignment::Symmetric => 0,
        CaseAssignment::Asymmetric => 1,
    }
}

type Key = (usize, usize, u32, u32);

/// Axis value of the figure for a row, or `None` when the row is not part of it.
fn select(figure: Figure, p: &ResultPoint) -> Option<u32> {
    match figure {
        Figure::Fig2 => (p.case == CaseAssignment::Symmetric && p.cw == 15).then_some(p.n_vehicles),
        Figure::Fig4 => (p.case == CaseAssignment::Asymmetric && p.cw == 15).then_some(p.n_vehicles),
        Figure::Fig3 => (p.case == CaseAssignment::Symmetric && p.n_vehicles == 100).then_some(p.cw),
        Figure::Fig5 => (p.method == AccessMethod::BondN).then_some(p.n_vehicles),
    }
}

/// Sweep points the figure needs, given the vehicle counts present.
fn required(figure: Figure, groups: &BTreeMap<Key, Vec<f64>>) -> Vec<(CaseAssignment, AccessMethod, u32, u32)> {
    let xs = |case: CaseAssignment| -> BTreeSet<u32> {
        groups.keys().filter(|k| k.0 == case_index(case)).map(|k| k.3).collect()
    };
    let mut req = Vec::new();
    match figure {
        Figure::Fig2 | Figure::Fig4 => {
            let case = if figure == Figure::Fig2 { CaseAssignment::Symmetric } else { CaseAssignment::Asymmetric };
            let mut ns = xs(case);
            if ns.is_empty() {
                ns.insert(100);
            }
            for m in AccessMethod::ALL {
                for &n in &ns {
                    req.push((case, m, 15, n));
                }
            }
        }
        Figure::Fig3 => {
            for m in AccessMethod::ALL {
                for cw in ContentionWindow::STANDARD {
                    req.push((CaseAssignment::Symmetric, m, cw, cw));
                }
            }
        }
        Figure::Fig5 => {
            for case in [CaseAssignment::Symmetric, CaseAssignment::Asymmetric] {
                let mut cws: BTreeSet<u32> =
                    groups.keys().filter(|k| k.0 == case_index(case)).map(|k| k.2).collect();
                cws.extend([15, 511]);
                let mut ns = xs(case);
                if ns.is_empty() {
                    ns.insert(100);
                }
                for &cw in &cws {
                    for &n in &ns {
                        req.push((case, AccessMethod::BondN, cw, n));
                    }
                }
            }
        }
    }
    req
}

/// Mean and standard deviation over seeds for every point of a figure.
///
/// Fails with the list of absent sweep points when the rows do not cover
/// the figure.
pub fn plot_data(rows: &[ResultPoint], figure: Figure) -> Result<Vec<PlotRow>, ExperimentError> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for p in rows {
        if let Some(x) = select(figure, p) {
            groups
                .entry((case_index(p.case), method_index(p.method), p.cw, x))
                .or_default()
                .push(p.max_unsatisfied_ratio);
        }
    }
    let missing: Vec<String> = required(figure, &groups)
        .into_iter()
        .filter(|&(case, m, cw, x)| !groups.contains_key(&(case_index(case), method_index(m), cw, x)))
        .map(|(case, m, cw, x)| match figure {
            Figure::Fig3 => format!("{case}/{m}/cw={cw}/n=100"),
            _ => format!("{case}/{m}/cw={cw}/n={x}"),
        })
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::Coverage { figure: figure.to_string(), missing });
    }
    Ok(groups
        .into_iter()
        .map(|((c, m, cw, x), values)| {
            let (mean, std) = mean_std(&values);
            PlotRow {
                figure: figure.as_str(),
                case: if c == 0 { CaseAssignment::Symmetric } else { CaseAssignment::Asymmetric },
                method: AccessMethod::ALL[m],
                cw,
                x,
                mean,
                std,
                seeds: values.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: AccessMethod, case: CaseAssignment, cw: u32, n: u32, seed: u64, r: f64) -> ResultPoint {
        ResultPoint { method, case, cw, n_vehicles: n, seed, max_unsatisfied_ratio: r }
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn fig2_aggregates_one_line_per_method() {
        let mut rows = Vec::new();
        for m in AccessMethod::ALL {
            for n in [20, 40] {
                for seed in 1..=10 {
                    rows.push(row(m, CaseAssignment::Symmetric, 15, n, seed, seed as f64 / 10.0));
                }
            }
        }
        rows.push(row(AccessMethod::Edca, CaseAssignment::Asymmetric, 15, 20, 1, 0.9));
        let out = plot_data(&rows, Figure::Fig2).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|r| r.seeds == 10 && (r.mean - 0.55).abs() < 1e-12));
    }

    #[test]
    fn fig3_names_missing_windows() {
        let rows: Vec<_> =
            AccessMethod::ALL.iter().map(|&m| row(m, CaseAssignment::Symmetric, 15, 100, 1, 0.5)).collect();
        match plot_data(&rows, Figure::Fig3) {
            Err(ExperimentError::Coverage { missing, .. }) => {
                assert_eq!(missing.len(), 4 * 6);
                assert!(missing.iter().any(|m| m.contains("cw=1023")));
                assert!(!missing.iter().any(|m| m.contains("cw=15/")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fig5_requires_and_reports_the_511_series() {
        let mut rows = Vec::new();
        for case in [CaseAssignment::Symmetric, CaseAssignment::Asymmetric] {
            rows.push(row(AccessMethod::BondN, case, 15, 100, 1, 0.8));
        }
        assert!(matches!(plot_data(&rows, Figure::Fig5), Err(ExperimentError::Coverage { .. })));
        for case in [CaseAssignment::Symmetric, CaseAssignment::Asymmetric] {
            rows.push(row(AccessMethod::BondN, case, 511, 100, 1, 0.2));
        }
        let out = plot_data(&rows, Figure::Fig5).unwrap();
        assert_eq!(out.iter().filter(|r| r.cw == 511).count(), 2);
    }

    #[test]
    fn reads_rows_by_header_name() {
        let csv = "seed,method,case,cw,n_vehicles,max_unsatisfied_ratio,extra\n3,bond_bd,asymmetric,31,40,0.25,x\n";
        let rows = read_results(csv.as_bytes()).unwrap();
        assert_eq!(rows, vec![row(AccessMethod::BondBd, CaseAssignment::Asymmetric, 31, 40, 3, 0.25)]);
        assert!(read_results("method,case\n".as_bytes()).is_err());
    }

    #[test]
    fn figure_names_parse() {
        for f in Figure::ALL {
            assert_eq!(f.as_str().parse::<Figure>().unwrap(), f);
        }
        assert!("fig9".parse::<Figure>().is_err());
    }
}
