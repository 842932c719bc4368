//! Pipeline orchestration: load the dataset, fit the family, run the chosen
//! cross-validation strategy, apply the selection rules, export.

use std::fs;
use std::path::Path;

use tikreg::crossval::{
    gcv_curve, loocv_press, segcv_press_explicit, segcv_press_implicit, vircv_press_seeded,
    CvCurve,
};
use tikreg::model::{fit_family, Dataset, ModelFamily};
use tikreg::select::{chi_square_rule, grid_minimum, one_se_rule, SelectionResult};

use crate::config::{RuleArg, RunConfig, StrategyArg};
use crate::io::{
    read_numeric_csv, read_segments, write_coefficients, write_curve, write_residuals,
    write_selection, ModelColumn, SelectionRecord,
};
use crate::CliError;

/// Runs the whole pipeline, bounding worker parallelism when asked to.
pub fn run(config: &RunConfig) -> Result<(), CliError> {
    match config.threads {
        None => execute(config),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| execute(config)),
    }
}

fn execute(config: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(config)?;
    let family = fit_family(&data, &config.reg, &config.grid).map_err(CliError::numeric)?;
    let curve = strategy_curve(config, &data, &family)?;

    // The GCV columns come with the curve when the strategy produces them,
    // and from the shared fit otherwise.
    let gcv = match &curve.gcv {
        Some(g) => g.clone(),
        None => gcv_curve(&family).map_err(CliError::numeric)?.press,
    };

    let mut records = Vec::new();
    let mut columns = Vec::new();
    for &rule in &config.rules {
        for k in 0..data.q() {
            let sel = apply_rule(rule, &curve, k, config.alpha)?;
            let (beta, intercepts) =
                family.coefficients_at(sel.index).map_err(CliError::numeric)?;
            columns.push(ModelColumn {
                name: format!("{}_r{}", sel.rule.label(), k + 1),
                intercept: intercepts[k],
                coefficients: beta.column(k).into_owned(),
                cv_residuals: curve.cv_residuals[sel.index].column(k).into_owned(),
            });
            records.push(SelectionRecord {
                response: k + 1,
                rule: sel.rule.label(),
                alpha: matches!(rule, RuleArg::Chi2).then_some(config.alpha),
                lambda: sel.lambda,
                index: sel.index,
                criterion_value: sel.criterion_value,
            });
        }
    }

    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", config.out_dir.display())))?;
    let out = |name: &str| config.out_dir.join(name);
    write_curve(
        &out("curve.csv"),
        config.grid.values(),
        &curve.press,
        &gcv,
        family.degrees_of_freedom(),
    )?;
    write_selection(&out("selection.json"), &records)?;
    write_coefficients(&out("coefficients.csv"), &columns)?;
    write_residuals(&out("residuals.csv"), &columns)?;
    Ok(())
}

fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let x = read_numeric_csv(&config.x_path)?;
    let y = read_numeric_csv(&config.y_path)?;
    if y.nrows() != x.nrows() {
        return Err(CliError::Input(format!(
            "{} has {} rows but {} has {}",
            config.y_path.display(),
            y.nrows(),
            config.x_path.display(),
            x.nrows()
        )));
    }
    match &config.segments_path {
        None => Dataset::new(x, y),
        Some(path) => {
            let (labels, warning) = read_segments(path)?;
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            if labels.len() != x.nrows() {
                return Err(CliError::Input(format!(
                    "{}: {} labels for {} data rows",
                    path.display(),
                    labels.len(),
                    x.nrows()
                )));
            }
            Dataset::with_segments(x, y, labels)
        }
    }
    .map_err(|e| CliError::Input(e.to_string()))
}

fn strategy_curve(
    config: &RunConfig,
    data: &Dataset,
    family: &ModelFamily,
) -> Result<CvCurve, CliError> {
    match config.strategy {
        StrategyArg::Loocv => loocv_press(family),
        StrategyArg::Gcv => gcv_curve(family),
        StrategyArg::Segcv => segcv_press_implicit(family, data),
        StrategyArg::SegcvExplicit => segcv_press_explicit(data, &config.reg, &config.grid),
        StrategyArg::Vircv => vircv_press_seeded(data, &config.reg, &config.grid, config.seed),
    }
    .map_err(CliError::numeric)
}

fn apply_rule(
    rule: RuleArg,
    curve: &CvCurve,
    response: usize,
    alpha: f64,
) -> Result<SelectionResult, CliError> {
    match rule {
        RuleArg::Min => grid_minimum(curve, response),
        RuleArg::OneSe => one_se_rule(curve, response),
        RuleArg::Chi2 => chi_square_rule(curve, response, alpha),
    }
    .map_err(CliError::numeric)
}

/// Convenience used by tests: the curve file a run would write, as a path.
pub fn curve_path(out_dir: &Path) -> std::path::PathBuf {
    out_dir.join("curve.csv")
}
