use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use dstc_core::eval::{metric_grid, MetricGrid, DIRECTIONS, TEST_METRICS};
use dstc_core::train::{train, LossRow};
use dstc_core::{DstcModel, Metric, PairedDataset};
use log::info;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::{create_dir, load_data, train_without_stage1, write_file, AblateArgs, ConfigError};

pub const THREADS_ENV: &str = "DSTC_THREADS";

pub fn parse_rows(rows: &[usize]) -> Result<Vec<LossRow>, ConfigError> {
    let mut seen = BTreeSet::new();
    rows.iter()
        .map(|&n| {
            if !seen.insert(n) {
                return Err(ConfigError(format!("row {n} requested twice")));
            }
            LossRow::get(n).ok_or_else(|| ConfigError(format!("row {n} does not exist (rows are 1-10)")))
        })
        .collect()
}

fn thread_count() -> Result<Option<usize>, ConfigError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

struct Job {
    row: LossRow,
    metric: Metric,
    cfg: RunConfig,
}

pub fn header() -> String {
    let mut h = String::from("row,losses,train_metric");
    for m in TEST_METRICS {
        for d in DIRECTIONS {
            let _ = write!(h, ",{}_{}", m.short_name(), d.short_name());
        }
    }
    for d in DIRECTIONS {
        let _ = write!(h, ",class_avg_cos_{}", d.short_name());
    }
    h
}

fn csv_line(row: &LossRow, metric: Metric, grid: &MetricGrid) -> String {
    let mut line = format!("{},{},{}", row.number, row.label(), metric.short_name());
    for m in TEST_METRICS {
        for d in DIRECTIONS {
            let cell = grid.get(metric, m, d).expect("grid covers every cell");
            let _ = write!(line, ",{:.6}", cell.map);
        }
    }
    for d in DIRECTIONS {
        let cell = grid.get(metric, Metric::Cosine, d).expect("grid covers every cell");
        let _ = write!(line, ",{:.6}", cell.class_avg_map);
    }
    line
}

fn run_job(job: &Job, data: &PairedDataset, skip_stage1: bool) -> anyhow::Result<DstcModel> {
    info!("training row {} ({}) with {} pointwise terms", job.row.number, job.row.label(), job.metric.short_name());
    let model = if skip_stage1 {
        train_without_stage1(&job.cfg, data)?.0
    } else {
        let arch = job.cfg.preset.arch(data.x_dim(), data.y_dim(), data.num_classes());
        train(&job.cfg.train, data, &arch)?.0
    };
    Ok(model)
}

pub fn run(a: AblateArgs) -> anyhow::Result<()> {
    let rows = parse_rows(&a.rows)?;
    let distinct: HashSet<Metric> = a.train_metrics.iter().copied().collect();
    if distinct.len() != a.train_metrics.len() {
        return Err(ConfigError("a train metric was requested twice".into()).into());
    }
    let base = RunConfig::load(a.run.config.as_deref(), &a.run.overrides())?;
    let data = load_data(&base.data_path()?)?;
    let out = base.out_dir()?;
    let arch = base.preset.arch(data.x_dim(), data.y_dim(), data.num_classes());
    arch.check(data.num_classes(), data.x_dim(), data.y_dim())?;
    let threads = thread_count()?;

    let jobs: Vec<Job> = rows
        .iter()
        .flat_map(|&row| {
            let base = &base;
            a.train_metrics.iter().map(move |&metric| {
                let mut cfg = base.clone();
                cfg.train.seed = base.train.seed.wrapping_add(row.number as u64);
                cfg.train.stage2 = row.apply(&base.train.stage2, metric);
                Job { row, metric, cfg }
            })
        })
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let models: Vec<DstcModel> =
        pool.install(|| jobs.par_iter().map(|job| run_job(job, &data, a.no_stage1)).collect::<anyhow::Result<_>>())?;

    let mut csv = header() + "\n";
    for (job, model) in jobs.iter().zip(&models) {
        let grid = metric_grid(&[(job.metric, model)], &data, a.split.into())?;
        csv.push_str(&csv_line(&job.row, job.metric, &grid));
        csv.push('\n');
    }
    create_dir(&out)?;
    write_file(&out.join("config.json"), serde_json::to_string_pretty(&base)? + "\n")?;
    write_file(&out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_must_be_distinct_and_in_range() {
        assert_eq!(parse_rows(&[1, 2, 5]).unwrap().len(), 3);
        assert!(parse_rows(&[1, 2, 1]).is_err());
        assert!(parse_rows(&[11]).is_err());
        assert!(parse_rows(&[0]).is_err());
    }

    #[test]
    fn header_has_grid_and_class_average_columns() {
        let h = header();
        assert_eq!(h.split(',').count(), 3 + 2 * 3 + 3);
        assert!(h.starts_with("row,losses,train_metric,cos_x2y"));
    }
}
