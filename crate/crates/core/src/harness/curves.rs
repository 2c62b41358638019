use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, HarnessError};
use crate::learner::METRICS_HEADER;
use crate::numerics::Real;

/// File written by [`emit_curves`] into the run directory.
pub const CURVES_FILE: &str = "curves.csv";
/// `series` is `seed-<s>` for one run or `mean` across seeds; `se` is the
/// sample standard deviation over `sqrt(n)`, empty when `n = 1`.
pub const CURVES_HEADER: &str = "arch,regime,env_steps,series,accuracy,se,n";

/// The columns of a metrics row that curves use.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub arch: String,
    pub regime: String,
    pub accuracy: Option<Real>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub arch: String,
    pub regime: String,
    pub env_steps: u64,
    pub series: String,
    pub accuracy: Real,
    pub se: Option<Real>,
    pub n: usize,
}

pub fn read_metrics(text: &str, file: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let bad = |message: String| HarnessError::Metrics { file: file.to_string(), message };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad("header does not match the metrics schema".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
        }
        let num = |j: usize| f[j].parse::<u64>().map_err(|_| bad(format!("row {}: bad integer {:?}", i + 1, f[j])));
        let accuracy = match f[4] {
            "" => None,
            s => Some(s.parse::<Real>().map_err(|_| bad(format!("row {}: bad accuracy {s:?}", i + 1)))?),
        };
        rows.push(MetricsRow { env_steps: num(1)?, arch: f[2].into(), regime: f[3].into(), accuracy, seed: num(12)? });
    }
    Ok(rows)
}

fn median_increment(rows: &[MetricsRow]) -> Option<u64> {
    let mut d: Vec<u64> = rows.windows(2).map(|w| w[1].env_steps.saturating_sub(w[0].env_steps)).filter(|&x| x > 0).collect();
    if d.is_empty() {
        return rows.first().map(|r| r.env_steps).filter(|&x| x > 0);
    }
    d.sort_unstable();
    Some(d[d.len() / 2])
}

/// bucket -> seed -> (sum, count)
type Buckets = BTreeMap<u64, BTreeMap<u64, (Real, usize)>>;

/// Aligns runs on a common env-step grid and averages across seeds.
///
/// The bucket width is the largest median env-step increment over all
/// runs; a row at `s` env steps lands in bucket `round(s / width) * width`.
/// Within a bucket a run contributes the mean of its non-empty accuracies.
pub fn aggregate_curves(runs: &[Vec<MetricsRow>]) -> Vec<CurveRow> {
    let width = runs.iter().filter_map(|r| median_increment(r)).max().unwrap_or(1).max(1);
    let mut grid: BTreeMap<(String, String), Buckets> = BTreeMap::new();
    for run in runs {
        for r in run {
            let Some(a) = r.accuracy else { continue };
            let bucket = ((r.env_steps as f64 / width as f64).round() as u64) * width;
            let cell = grid
                .entry((r.arch.clone(), r.regime.clone()))
                .or_default()
                .entry(bucket)
                .or_default()
                .entry(r.seed)
                .or_insert((0.0, 0));
            cell.0 += a;
            cell.1 += 1;
        }
    }
    let mut out = Vec::new();
    for ((arch, regime), buckets) in grid {
        for (env_steps, seeds) in buckets {
            let means: Vec<Real> = seeds.values().map(|&(s, c)| s / c as Real).collect();
            for (&seed, &m) in seeds.keys().zip(&means) {
                out.push(CurveRow { arch: arch.clone(), regime: regime.clone(), env_steps, series: format!("seed-{seed}"), accuracy: m, se: None, n: 1 });
            }
            let n = means.len();
            let mean = means.iter().sum::<Real>() / n as Real;
            let se = (n > 1).then(|| {
                let var = means.iter().map(|x| (x - mean).powi(2)).sum::<Real>() / (n - 1) as Real;
                (var / n as Real).sqrt()
            });
            out.push(CurveRow { arch: arch.clone(), regime: regime.clone(), env_steps, series: "mean".into(), accuracy: mean, se, n });
        }
    }
    out
}

fn collect(dir: &Path, metrics: &mut Vec<PathBuf>, configs: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(&p, metrics, configs)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            metrics.push(p);
        } else if p.file_name().is_some_and(|n| n == "experiment.cfg") {
            configs.push(p);
        }
    }
    Ok(())
}

/// Aggregates every `metrics.csv` below `dir` into `dir/curves.csv`.
///
/// Each seed directory holds the config it was run with; seeds that config
/// lists without a sibling `seed-<s>/metrics.csv` are reported as missing.
pub fn emit_curves(dir: &Path) -> Result<PathBuf, HarnessError> {
    let (mut metrics, mut configs) = (Vec::new(), Vec::new());
    collect(dir, &mut metrics, &mut configs)?;
    let mut missing = Vec::new();
    for cfg in &configs {
        let config = ExperimentConfig::parse(&fs::read_to_string(cfg)?)?;
        let Some(parent) = cfg.parent().and_then(Path::parent) else { continue };
        for s in &config.seeds {
            let expected = parent.join(format!("seed-{s}")).join("metrics.csv");
            if !expected.exists() && !missing.contains(&expected.display().to_string()) {
                missing.push(expected.display().to_string());
            }
        }
    }
    if metrics.is_empty() && missing.is_empty() {
        missing.push(format!("{}/**/metrics.csv", dir.display()));
    }
    if !missing.is_empty() {
        return Err(HarnessError::MissingRuns(missing));
    }
    let runs = metrics
        .iter()
        .map(|p| read_metrics(&fs::read_to_string(p)?, &p.display().to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = format!("{CURVES_HEADER}\n");
    for r in aggregate_curves(&runs) {
        let se = r.se.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(text, "{},{},{},{},{},{},{}", r.arch, r.regime, r.env_steps, r.series, r.accuracy, se, r.n);
    }
    let out = dir.join(CURVES_FILE);
    fs::write(&out, text)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(env_steps: u64, accuracy: Option<Real>, seed: u64) -> MetricsRow {
        MetricsRow { env_steps, arch: "dcem".into(), regime: "fast-mapping".into(), accuracy, seed }
    }

    fn csv(rows: &[(u64, &str, u64)]) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for (i, (steps, acc, seed)) in rows.iter().enumerate() {
            s.push_str(&format!("{},{steps},dcem,fast-mapping,{acc},0.5,0.1,0.2,2.0,3.0,0,0,{seed}\n", i + 1));
        }
        s
    }

    #[test]
    fn three_seeds_match_hand_computation() {
        // Hand-computed: mean of (0.2, 0.4, 0.9) = 0.5; sample sd = sqrt(0.13);
        // SE = sqrt(0.13 / 3).
        let runs = vec![
            vec![row(1000, Some(0.1), 1), row(2000, Some(0.2), 1)],
            vec![row(1000, Some(0.3), 2), row(2000, Some(0.4), 2)],
            vec![row(1000, Some(0.2), 3), row(2000, Some(0.9), 3)],
        ];
        let out = aggregate_curves(&runs);
        let mean = out.iter().find(|r| r.series == "mean" && r.env_steps == 2000).unwrap();
        assert!((mean.accuracy - 0.5).abs() < 1e-12);
        assert!((mean.se.unwrap() - (0.13f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean.n, 3);
        let first = out.iter().find(|r| r.series == "mean" && r.env_steps == 1000).unwrap();
        assert!((first.accuracy - 0.2).abs() < 1e-12);
        assert!((first.se.unwrap() - (0.01f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(out.iter().filter(|r| r.series.starts_with("seed-")).count(), 6);
    }

    #[test]
    fn single_seed_has_no_se() {
        let out = aggregate_curves(&[vec![row(64, Some(0.5), 4), row(128, None, 4), row(192, Some(1.0), 4)]]);
        let means: Vec<&CurveRow> = out.iter().filter(|r| r.series == "mean").collect();
        assert_eq!(means.len(), 2);
        assert!(means.iter().all(|r| r.se.is_none() && r.n == 1));
    }

    #[test]
    fn mixed_cadence_runs_share_buckets() {
        // Run A logs every 100 steps, run B every 250: width = 250, and A's
        // rows at 100, 200, 300 fall in buckets 0, 250, 250.
        let a = vec![row(100, Some(0.0), 1), row(200, Some(0.2), 1), row(300, Some(0.4), 1), row(500, Some(0.6), 1)];
        let b = vec![row(250, Some(0.5), 2), row(500, Some(0.7), 2)];
        let out = aggregate_curves(&[a, b]);
        let at = |steps: u64, series: &str| out.iter().find(|r| r.env_steps == steps && r.series == series).map(|r| r.accuracy);
        assert_eq!(at(0, "seed-1"), Some(0.0));
        assert!((at(250, "seed-1").unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(at(250, "seed-2"), Some(0.5));
        assert!((at(250, "mean").unwrap() - 0.4).abs() < 1e-12);
        assert!((at(500, "mean").unwrap() - 0.65).abs() < 1e-12);
        assert_eq!(at(0, "seed-2"), None);
    }

    #[test]
    fn emit_writes_long_format_and_lists_missing_runs() {
        let dir = tempfile::tempdir().unwrap();
        let exp = dir.path().join("flagship");
        let config = ExperimentConfig { name: "flagship".into(), seeds: vec![1, 2, 3], out_dir: dir.path().to_path_buf(), ..ExperimentConfig::default() };
        for s in [1u64, 2] {
            let d = exp.join(format!("seed-{s}"));
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("experiment.cfg"), config.to_text()).unwrap();
            fs::write(d.join("metrics.csv"), csv(&[(1024, "0.25", s), (2048, "", s), (3072, "0.5", s)])).unwrap();
        }
        match emit_curves(dir.path()) {
            Err(HarnessError::MissingRuns(m)) => {
                assert_eq!(m.len(), 1);
                assert!(m[0].contains("seed-3"));
            }
            other => panic!("{other:?}"),
        }
        let d = exp.join("seed-3");
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("metrics.csv"), csv(&[(1024, "1", 3), (2048, "", 3), (3072, "0", 3)])).unwrap();
        let out = emit_curves(dir.path()).unwrap();
        let text = fs::read_to_string(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CURVES_HEADER);
        assert!(lines.contains(&"dcem,fast-mapping,1024,mean,0.5,0.25,3"));
        assert!(lines.contains(&"dcem,fast-mapping,1024,seed-3,1,,1"));
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 7));
    }

    #[test]
    fn empty_and_malformed_inputs_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_curves(dir.path()), Err(HarnessError::MissingRuns(_))));
        assert!(read_metrics("step,env_steps\n", "x").is_err());
        assert!(read_metrics(&format!("{METRICS_HEADER}\n1,2,3\n"), "x").is_err());
        let ok = read_metrics(&csv(&[(10, "", 1)]), "x").unwrap();
        assert_eq!(ok[0].accuracy, None);
    }
}
