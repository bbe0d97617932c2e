//! Report CSVs: per-phase metric rows, a wide per-spec F1 table, a long
//! plot-ready series file and the paired test for the effect of K.

use std::collections::BTreeSet;
use std::path::Path;

use sparsecast_core::ablation::{AblationReport, AblationRow};
use sparsecast_core::FeatureSetSpec;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const PHASE_HEADER: [&str; 17] = [
    "ordering",
    "phase",
    "label",
    "spec",
    "train_participants",
    "test_participants",
    "train_windows",
    "test_windows",
    "final_loss",
    "tp",
    "fp",
    "fn",
    "tn",
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
];

pub const TEST_NAME: &str = "paired two-sided t-test over per-phase macro-F1 differences";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Phase label as `<cumulative train>-<test participants>`, e.g. `22-5`.
pub fn phase_label(r: &AblationRow) -> String {
    format!("{}-{}", r.cumulative_train_participants, r.test_participants)
}

pub fn write_phase_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(PHASE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let c = &r.confusion;
        let m = &r.metrics;
        w.write_record([
            r.ordering.to_string(),
            (r.phase + 1).to_string(),
            phase_label(r),
            r.spec.to_string(),
            r.cumulative_train_participants.to_string(),
            r.test_participants.to_string(),
            r.train_windows.to_string(),
            r.test_windows.to_string(),
            r.final_loss.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            m.accuracy.to_string(),
            m.macro_precision.to_string(),
            m.macro_recall.to_string(),
            m.macro_f1.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn specs_in_order(report: &AblationReport) -> Vec<FeatureSetSpec> {
    let mut out = Vec::new();
    for r in &report.rows {
        if !out.contains(&r.spec) {
            out.push(r.spec);
        }
    }
    out
}

/// One row per (ordering, phase) plus a `mean` row per phase, one macro-F1
/// column per spec.
pub fn write_wide_csv(path: &Path, report: &AblationReport) -> Result<()> {
    let specs = specs_in_order(report);
    let orderings: BTreeSet<u64> = report.rows.iter().map(|r| r.ordering).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["ordering".to_string(), "phase".into(), "label".into()];
    header.extend(specs.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for phase in 0..report.phases() {
        let label = report.rows.iter().find(|r| r.phase == phase).map(phase_label).unwrap_or_default();
        for &o in &orderings {
            let mut rec = vec![o.to_string(), (phase + 1).to_string(), label.clone()];
            for s in &specs {
                let f1 = report.rows.iter().find(|r| r.ordering == o && r.phase == phase && r.spec == *s).map(|r| r.metrics.macro_f1);
                rec.push(f1.map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        let mut rec = vec!["mean".to_string(), (phase + 1).to_string(), label];
        rec.extend(specs.iter().map(|s| report.mean_by_phase(*s)[phase].macro_f1.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `series,ordering,phase,label,metric,value`: one line per plotted point.
pub fn write_long_csv(path: &Path, series_prefix: &str, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["series", "ordering", "phase", "label", "metric", "value"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let m = &r.metrics;
        for (name, v) in
            [("accuracy", m.accuracy), ("macro_precision", m.macro_precision), ("macro_recall", m.macro_recall), ("macro_f1", m.macro_f1)]
        {
            w.write_record([
                format!("{series_prefix}{}", r.spec),
                r.ordering.to_string(),
                (r.phase + 1).to_string(),
                phase_label(r),
                name.to_string(),
                v.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Paired two-sided t-test of `with - without`. `None` with fewer than two
/// pairs. Identical differences give `t = ±inf, p = 0`, or `t = 0, p = 1`
/// when they are all zero.
pub fn paired_t_test(with: &[f64], without: &[f64]) -> Option<PairedTest> {
    let n = with.len().min(without.len());
    if n < 2 {
        return None;
    }
    let d: Vec<f64> = with.iter().zip(without).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Some(PairedTest { n, mean_diff: mean, t, p_value: p });
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Some(PairedTest { n, mean_diff: mean, t, p_value: p })
}

/// Base spec and its `+K` partner, for every such pair in the report.
pub fn k_pairs(report: &AblationReport) -> Vec<(FeatureSetSpec, FeatureSetSpec)> {
    let specs = specs_in_order(report);
    specs
        .iter()
        .filter(|s| !s.include_k)
        .filter_map(|s| {
            let k = FeatureSetSpec { include_k: true, ..*s };
            specs.contains(&k).then_some((*s, k))
        })
        .collect()
}

/// Tests the effect of K over all (ordering, phase) pairs.
pub fn write_k_tests(path: &Path, report: &AblationReport) -> Result<Vec<(FeatureSetSpec, FeatureSetSpec, Option<PairedTest>)>> {
    let orderings: BTreeSet<u64> = report.rows.iter().map(|r| r.ordering).collect();
    let mut out = Vec::new();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["without", "with", "pairs", "mean_f1_difference", "t", "p_value", "test"]).map_err(|e| csv_err(path, e))?;
    for (base, with_k) in k_pairs(report) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &o in &orderings {
            let x = report.f1_series(with_k, o);
            let y = report.f1_series(base, o);
            let n = x.len().min(y.len());
            a.extend_from_slice(&x[..n]);
            b.extend_from_slice(&y[..n]);
        }
        let test = paired_t_test(&a, &b);
        let cell = |f: fn(&PairedTest) -> f64| test.as_ref().map(|t| f(t).to_string()).unwrap_or_default();
        w.write_record([
            base.to_string(),
            with_k.to_string(),
            a.len().to_string(),
            cell(|t| t.mean_diff),
            cell(|t| t.t),
            cell(|t| t.p_value),
            TEST_NAME.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
        out.push((base, with_k, test));
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparsecast_core::metrics::{Confusion, Metrics};

    fn row(ordering: u64, phase: usize, spec: FeatureSetSpec, f1: f64) -> AblationRow {
        AblationRow {
            ordering,
            phase,
            spec,
            cumulative_train_participants: [1, 5][phase],
            test_participants: 5,
            train_windows: 10,
            test_windows: 4,
            final_loss: 0.5,
            confusion: Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 },
            metrics: Metrics { macro_f1: f1, ..Metrics::default() },
        }
    }

    fn report() -> AblationReport {
        let mut rows = Vec::new();
        for o in 0..2 {
            for p in 0..2 {
                rows.push(row(o, p, FeatureSetSpec::H, 0.4 + 0.01 * p as f64));
                rows.push(row(o, p, FeatureSetSpec::HK, 0.8 + 0.02 * (o as usize + p) as f64));
            }
        }
        AblationReport { rows }
    }

    #[test]
    fn wide_table_has_one_column_per_spec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.csv");
        write_wide_csv(&path, &report()).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["ordering", "phase", "label", "H", "H+K"]);
        let recs: Vec<_> = r.records().map(|x| x.unwrap()).collect();
        // Two orderings plus the mean, for each of two phases.
        assert_eq!(recs.len(), 6);
        assert_eq!(&recs[2][0], "mean");
        assert_eq!(&recs[2][2], "1-5");
        assert!((recs[2][4].parse::<f64>().unwrap() - 0.81).abs() < 1e-12);
    }

    #[test]
    fn phase_and_long_files() {
        let dir = tempfile::tempdir().unwrap();
        let rows = report().rows;
        write_phase_csv(&dir.path().join("p.csv"), &rows).unwrap();
        write_long_csv(&dir.path().join("l.csv"), "ablation:", &rows).unwrap();
        let p = csv::Reader::from_path(dir.path().join("p.csv")).unwrap().into_records().count();
        let l = csv::Reader::from_path(dir.path().join("l.csv")).unwrap().into_records().count();
        assert_eq!((p, l), (8, 32));
    }

    #[test]
    fn t_test_matches_hand_computation() {
        // d = [1, 2, 3]: mean 2, sd 1, t = 2 / (1 / sqrt 3).
        let t = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // Two-sided p for t = 3.4641 with 2 degrees of freedom: 1 - t / sqrt(t^2 + 2).
        let exact = 1.0 - t.t / (t.t * t.t + 2.0).sqrt();
        assert!((t.p_value - exact).abs() < 1e-9, "{} vs {exact}", t.p_value);
        assert!(paired_t_test(&[1.0], &[0.0]).is_none());
        assert_eq!(paired_t_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p_value, 1.0);
    }

    #[test]
    fn k_test_pairs_bases_with_their_k_partner() {
        let dir = tempfile::tempdir().unwrap();
        let tests = write_k_tests(&dir.path().join("k.csv"), &report()).unwrap();
        assert_eq!(tests.len(), 1);
        let (base, with_k, t) = &tests[0];
        assert_eq!((*base, *with_k), (FeatureSetSpec::H, FeatureSetSpec::HK));
        let t = t.as_ref().unwrap();
        assert_eq!(t.n, 4);
        assert!(t.mean_diff > 0.3 && t.p_value < 0.01);
    }
}
