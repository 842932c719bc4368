//! Flag parsing and the validated run configuration.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use tikreg::linalg::DEFAULT_COMPLETION_SEED;
use tikreg::model::LambdaGrid;
use tikreg::regularization::RegularizationSpec;
use tikreg::select::DEFAULT_CHI_SQUARE_ALPHA;

use crate::CliError;

/// Cross-validated Tikhonov regression over a lambda grid.
#[derive(Debug, Parser)]
#[command(name = "tikreg", version)]
pub struct Cli {
    /// Predictor CSV: n rows x p numeric columns, optional header line.
    #[arg(long, value_name = "FILE")]
    pub x: PathBuf,

    /// Response CSV: n rows x q numeric columns, optional header line.
    #[arg(long, value_name = "FILE")]
    pub y: PathBuf,

    /// Segment labels, one integer per row. Required by segcv,
    /// segcv-explicit, and vircv.
    #[arg(long, value_name = "FILE")]
    pub segments: Option<PathBuf>,

    /// Penalty operator.
    #[arg(long, value_enum, default_value_t = RegArg::Identity)]
    pub reg: RegArg,

    /// Size of the rank-completing rows in the d1/d2 penalties.
    #[arg(long, value_name = "E")]
    pub epsilon: Option<f64>,

    /// Smallest lambda on the grid (> 0).
    #[arg(long, value_name = "A")]
    pub lambda_min: f64,

    /// Largest lambda on the grid.
    #[arg(long, value_name = "B")]
    pub lambda_max: f64,

    /// Number of grid points (>= 2).
    #[arg(long, value_name = "N")]
    pub lambda_count: usize,

    /// Space the grid arithmetically instead of geometrically.
    #[arg(long)]
    pub linear_grid: bool,

    /// Prepend an exact lambda = 0 fit to the grid.
    #[arg(long)]
    pub include_zero: bool,

    /// Cross-validation strategy.
    #[arg(long, value_enum, default_value_t = StrategyArg::Loocv)]
    pub strategy: StrategyArg,

    /// Selection rules to apply, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "min")]
    pub rules: Vec<RuleArg>,

    /// Level for the chi2 rule, in (0, 1).
    #[arg(long, value_name = "A")]
    pub alpha: Option<f64>,

    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Upper bound on worker threads for the (segment, lambda) sweep.
    #[arg(long, value_name = "T")]
    pub threads: Option<usize>,

    /// Seed for the orthonormal completion drawn by vircv.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    Identity,
    Std,
    D1,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    /// Leave-one-out PRESS from leverages, no refits.
    Loocv,
    /// Generalised cross-validation.
    Gcv,
    /// Leave-one-segment-out via per-segment block solves, no refits.
    Segcv,
    /// Leave-one-segment-out by actually refitting each fold.
    SegcvExplicit,
    /// Segment CV through the per-segment orthonormal compression.
    Vircv,
}

impl StrategyArg {
    pub fn name(self) -> &'static str {
        match self {
            StrategyArg::Loocv => "loocv",
            StrategyArg::Gcv => "gcv",
            StrategyArg::Segcv => "segcv",
            StrategyArg::SegcvExplicit => "segcv-explicit",
            StrategyArg::Vircv => "vircv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    /// Grid minimum of the CV criterion.
    Min,
    /// Largest lambda within one standard error of the minimum.
    OneSe,
    /// Largest lambda whose PRESS ratio passes the chi-square bound.
    Chi2,
}

/// Validated configuration, ready for [`crate::run::run`].
#[derive(Debug)]
pub struct RunConfig {
    pub x_path: PathBuf,
    pub y_path: PathBuf,
    pub segments_path: Option<PathBuf>,
    pub reg: RegularizationSpec,
    pub grid: LambdaGrid,
    pub strategy: StrategyArg,
    pub rules: Vec<RuleArg>,
    pub alpha: f64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        if !cli.lambda_min.is_finite()
            || !cli.lambda_max.is_finite()
            || cli.lambda_min >= cli.lambda_max
        {
            return Err(CliError::Config(format!(
                "lambda range needs finite min < max, got [{}, {}]",
                cli.lambda_min, cli.lambda_max
            )));
        }
        if cli.lambda_count < 2 {
            return Err(CliError::Config(format!(
                "lambda grid needs at least 2 points, got {}",
                cli.lambda_count
            )));
        }

        let alpha = cli.alpha.unwrap_or(DEFAULT_CHI_SQUARE_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must lie strictly inside (0, 1), got {alpha}"
            )));
        }

        let needs_segments = matches!(
            cli.strategy,
            StrategyArg::Segcv | StrategyArg::SegcvExplicit | StrategyArg::Vircv
        );
        if needs_segments && cli.segments.is_none() {
            return Err(CliError::Config(format!(
                "strategy {} requires --segments",
                cli.strategy.name()
            )));
        }

        let mut reg = match cli.reg {
            RegArg::Identity => RegularizationSpec::identity(),
            RegArg::Std => RegularizationSpec::standardize(),
            RegArg::D1 => RegularizationSpec::derivative1(),
            RegArg::D2 => RegularizationSpec::derivative2(),
        };
        if let Some(e) = cli.epsilon {
            if !matches!(cli.reg, RegArg::D1 | RegArg::D2) {
                return Err(CliError::Config(
                    "--epsilon only applies to the d1 and d2 penalties".into(),
                ));
            }
            if !e.is_finite() || e <= 0.0 {
                return Err(CliError::Config(format!(
                    "epsilon must be positive and finite, got {e}"
                )));
            }
            reg.epsilon = e;
        }

        let base = if cli.linear_grid {
            LambdaGrid::linear_spaced(cli.lambda_min, cli.lambda_max, cli.lambda_count)
        } else {
            LambdaGrid::log_spaced(cli.lambda_min, cli.lambda_max, cli.lambda_count)
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        let grid = if cli.include_zero {
            let mut values = vec![0.0];
            values.extend_from_slice(base.values());
            LambdaGrid::with_zero(values).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            base
        };

        // Duplicate rules would only duplicate output columns.
        let mut rules = Vec::new();
        for r in cli.rules {
            if !rules.contains(&r) {
                rules.push(r);
            }
        }
        if rules.is_empty() {
            return Err(CliError::Config("at least one selection rule is required".into()));
        }

        Ok(RunConfig {
            x_path: cli.x,
            y_path: cli.y,
            segments_path: cli.segments,
            reg,
            grid,
            strategy: cli.strategy,
            rules,
            alpha,
            out_dir: cli.out,
            threads: cli.threads,
            seed: cli.seed.unwrap_or(DEFAULT_COMPLETION_SEED),
        })
    }
}
