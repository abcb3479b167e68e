//! Planner versus learned-pipeline comparison on generated scenarios.

use std::io::Write;
use std::time::Instant;

use crate::belief::check_feasibility;
use crate::dataset::{scenario_for_index, DatasetConfig, Scenario};
use crate::error::{Error, Result};
use crate::neural::unet::{predict, UNetParams};
use crate::planner::{plan, PlannerParams, PlannerStatus};
use crate::reconstruct::{reconstruct_path, ReconstructionParams};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Scenario generator; scenario `i` uses `scenario_for_index(i)` and the
    /// planner seed `seed_base + i`.
    pub scenarios: DatasetConfig,
    pub first_index: usize,
    pub count: usize,
    pub reconstruction: ReconstructionParams,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub id: usize,
    pub planner_solved: bool,
    pub planner_cost: f64,
    pub planner_length: f64,
    pub planner_seconds: f64,
    pub planner_feasible: bool,
    pub pipeline_success: bool,
    pub pipeline_cost: f64,
    pub pipeline_length: f64,
    /// Prediction plus reconstruction.
    pub pipeline_seconds: f64,
    pub predict_seconds: f64,
    pub graph_seconds: f64,
    pub fallback_rounds: usize,
    pub pipeline_feasible: bool,
    /// Set when the pipeline stopped with an error.
    pub error: Option<String>,
}

impl BenchRow {
    pub fn success_without_fallback(&self) -> bool {
        self.pipeline_success && self.fallback_rounds == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data; `NaN` when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartiles(values: impl IntoIterator<Item = f64>) -> Quartiles {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    Quartiles { q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub scenarios: usize,
    pub planner_success_rate: f64,
    pub pipeline_success_rate: f64,
    pub success_rate_without_fallback: f64,
    pub planner_length: Quartiles,
    pub pipeline_length: Quartiles,
    pub planner_seconds: Quartiles,
    pub pipeline_seconds: Quartiles,
    /// Median planner seconds over median pipeline seconds.
    pub speedup: f64,
    /// Median over scenarios of planner seconds / pipeline seconds.
    pub median_time_ratio: f64,
    /// Share of total pipeline time spent building belief graphs.
    pub graph_fraction: f64,
}

impl BenchSummary {
    pub fn from_rows(rows: &[BenchRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let rate = |f: &dyn Fn(&BenchRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
        let planner_seconds = quartiles(rows.iter().map(|r| r.planner_seconds));
        let pipeline_seconds = quartiles(rows.iter().map(|r| r.pipeline_seconds));
        let total: f64 = rows.iter().map(|r| r.pipeline_seconds).sum();
        let graph: f64 = rows.iter().map(|r| r.graph_seconds).sum();
        BenchSummary {
            scenarios: rows.len(),
            planner_success_rate: rate(&|r| r.planner_solved),
            pipeline_success_rate: rate(&|r| r.pipeline_success),
            success_rate_without_fallback: rate(&|r| r.success_without_fallback()),
            planner_length: quartiles(rows.iter().filter(|r| r.planner_solved).map(|r| r.planner_length)),
            pipeline_length: quartiles(rows.iter().filter(|r| r.pipeline_success).map(|r| r.pipeline_length)),
            planner_seconds,
            pipeline_seconds,
            speedup: planner_seconds.median / pipeline_seconds.median,
            median_time_ratio: quartiles(rows.iter().map(|r| r.planner_seconds / r.pipeline_seconds)).median,
            graph_fraction: if total > 0.0 { graph / total } else { f64::NAN },
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: BenchSummary,
    /// `key=value` settings echoed into the output header.
    pub settings: Vec<(String, String)>,
}

impl BenchReport {
    /// True when the stored summary equals a recomputation from the rows.
    pub fn audit(&self) -> bool {
        let again = BenchSummary::from_rows(&self.rows);
        // NaN-aware comparison through the debug form
        format!("{again:?}") == format!("{:?}", self.summary)
    }

    pub const ROW_HEADER: &'static str = "# id\tplanner_solved\tplanner_cost\tplanner_length\tplanner_s\tplanner_feasible\t\
        pipeline_success\tpipeline_cost\tpipeline_length\tpipeline_s\tpredict_s\tgraph_s\tfallback_rounds\tpipeline_feasible";

    pub fn write_tsv(&self, w: &mut impl Write) -> Result<()> {
        for (k, v) in &self.settings {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{}", Self::ROW_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                r.id,
                r.planner_solved as u8,
                r.planner_cost,
                r.planner_length,
                r.planner_seconds,
                r.planner_feasible as u8,
                r.pipeline_success as u8,
                r.pipeline_cost,
                r.pipeline_length,
                r.pipeline_seconds,
                r.predict_seconds,
                r.graph_seconds,
                r.fallback_rounds,
                r.pipeline_feasible as u8
            )?;
        }
        let s = &self.summary;
        let q = |q: &Quartiles| format!("{:.4}/{:.4}/{:.4}", q.q1, q.median, q.q3);
        writeln!(w, "# summary scenarios={}", s.scenarios)?;
        writeln!(
            w,
            "# success planner={:.3} pipeline={:.3} pipeline_without_fallback={:.3}",
            s.planner_success_rate, s.pipeline_success_rate, s.success_rate_without_fallback
        )?;
        writeln!(w, "# length_q1/median/q3 planner={} pipeline={}", q(&s.planner_length), q(&s.pipeline_length))?;
        writeln!(w, "# seconds_q1/median/q3 planner={} pipeline={}", q(&s.planner_seconds), q(&s.pipeline_seconds))?;
        writeln!(
            w,
            "# speedup={:.3} median_time_ratio={:.3} graph_fraction={:.3} audit={}",
            s.speedup,
            s.median_time_ratio,
            s.graph_fraction,
            self.audit()
        )?;
        Ok(())
    }
}

/// Times the planner and the learned pipeline on one scenario.
pub fn bench_scenario(
    id: usize,
    scenario: &Scenario,
    planner: &PlannerParams,
    net: &UNetParams,
    n: usize,
    recon: &ReconstructionParams,
) -> Result<BenchRow> {
    let t = Instant::now();
    let planned = plan(scenario, planner)?;
    let planner_seconds = t.elapsed().as_secs_f64();
    let feasible = |p: &crate::belief::BeliefPath| -> Result<bool> {
        Ok(check_feasibility(p, &scenario.start, &scenario.target, &scenario.obstacles, scenario.chi2, 2)?.ok())
    };
    let (planner_solved, planner_cost, planner_length, planner_feasible) = match (&planned.status, &planned.path) {
        (PlannerStatus::Solved, Some(p)) => (true, p.cost, p.length(), feasible(p)?),
        _ => (false, f64::NAN, f64::NAN, false),
    };

    // encoding is part of the pipeline's work
    let t = Instant::now();
    let stack = scenario.encode(n, n);
    let density = predict(net, &stack)?;
    let predict_time = t.elapsed();
    let outcome = reconstruct_path(&density, scenario, recon);
    let total = t.elapsed();
    let mut row = BenchRow {
        id,
        planner_solved,
        planner_cost,
        planner_length,
        planner_seconds,
        planner_feasible,
        pipeline_success: false,
        pipeline_cost: f64::NAN,
        pipeline_length: f64::NAN,
        pipeline_seconds: total.as_secs_f64(),
        predict_seconds: predict_time.as_secs_f64(),
        graph_seconds: 0.0,
        fallback_rounds: recon.fallback_rounds,
        pipeline_feasible: false,
        error: None,
    };
    match outcome {
        Ok(r) => {
            row.pipeline_success = true;
            row.pipeline_cost = r.path.cost;
            row.pipeline_length = r.path.length();
            row.graph_seconds = r.diagnostics.graph_time.as_secs_f64();
            row.fallback_rounds = r.diagnostics.rounds;
            row.pipeline_feasible = feasible(&r.path)?;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    Ok(row)
}

pub fn run_bench(config: &BenchConfig, net: &UNetParams) -> Result<BenchReport> {
    if config.threads == 0 {
        return Err(Error::InvalidParameter("threads must be at least 1".into()));
    }
    let n = config.scenarios.n1;
    if config.scenarios.n2 != n {
        return Err(Error::InvalidParameter("benchmark grids must be square".into()));
    }
    let one = |i: usize| -> Result<BenchRow> {
        let index = config.first_index + i;
        let scenario = scenario_for_index(&config.scenarios, index)?;
        let planner = PlannerParams { seed: config.scenarios.seed_base.wrapping_add(index as u64), ..config.scenarios.planner.clone() };
        bench_scenario(index, &scenario, &planner, net, n, &config.reconstruction)
    };
    let rows: Vec<BenchRow> = if config.threads <= 1 {
        (0..config.count).map(one).collect::<Result<_>>()?
    } else {
        let per = config.count.div_ceil(config.threads).max(1);
        let ids: Vec<usize> = (0..config.count).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> =
                ids.chunks(per).map(|c| s.spawn(move || c.iter().map(|&i| one(i)).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("benchmark worker panicked")).collect::<Result<Vec<_>>>()
        })?
    };
    let summary = BenchSummary::from_rows(&rows);
    let sc = &config.scenarios;
    let r = &config.reconstruction;
    let settings = vec![
        ("scenarios".into(), config.count.to_string()),
        ("first_index".into(), config.first_index.to_string()),
        ("seed_base".into(), sc.seed_base.to_string()),
        ("grid".into(), format!("{n}x{n}")),
        ("obstacles".into(), sc.obstacle_count.to_string()),
        ("chi2".into(), sc.chi2.to_string()),
        ("alpha".into(), sc.alpha.to_string()),
        ("planner_iters".into(), sc.planner.max_iters.to_string()),
        ("samples".into(), r.sample_count.to_string()),
        ("components".into(), r.components.to_string()),
        ("em_iters".into(), r.em_max_iters.to_string()),
        ("em_tol".into(), r.em_tol.to_string()),
        ("fallback_rounds".into(), r.fallback_rounds.to_string()),
        ("extra_samples".into(), r.extra_samples_per_round.to_string()),
        ("recon_seed".into(), r.seed.to_string()),
        ("cov_scale".into(), r.cov_scale.to_string()),
        ("k_nearest".into(), r.k_nearest.map_or("off".into(), |k| k.to_string())),
        ("threads".into(), config.threads.to_string()),
        ("unet".into(), format!("depth={} base={}", net.depth, net.base_channels)),
    ];
    Ok(BenchReport { rows, summary, settings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, ps: f64, qs: f64, ok: bool, rounds: usize) -> BenchRow {
        BenchRow {
            id,
            planner_solved: true,
            planner_cost: 1.0,
            planner_length: 1.0 + id as f64,
            planner_seconds: ps,
            planner_feasible: true,
            pipeline_success: ok,
            pipeline_cost: 1.0,
            pipeline_length: 2.0,
            pipeline_seconds: qs,
            predict_seconds: 0.0,
            graph_seconds: qs / 2.0,
            fallback_rounds: rounds,
            pipeline_feasible: ok,
            error: None,
        }
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.25), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
        let q = quartiles([5.0, 1.0, 3.0, f64::NAN]);
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
    }

    #[test]
    fn summary_from_rows() {
        let rows = vec![row(0, 1.0, 0.1, true, 0), row(1, 2.0, 0.5, true, 2), row(2, 3.0, 0.2, false, 5)];
        let s = BenchSummary::from_rows(&rows);
        assert!((s.pipeline_success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.success_rate_without_fallback - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.planner_seconds.median, 2.0);
        assert_eq!(s.pipeline_seconds.median, 0.2);
        assert!((s.speedup - 10.0).abs() < 1e-12);
        assert!((s.graph_fraction - 0.5).abs() < 1e-12);
        assert_eq!(s.planner_length.median, 2.0);
        let report = BenchReport { rows, summary: s, settings: vec![] };
        assert!(report.audit());
        let mut tampered = report.clone();
        tampered.summary.speedup = 3.0;
        assert!(!tampered.audit());
        let mut out = Vec::new();
        report.write_tsv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
        assert!(text.lines().all(|l| l.starts_with('#') || l.split('\t').count() == 14));
    }
}
