//! The five subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use envreg::eval::{
    losses_against_truth, misspecification_experiment, simulate, two_stage_experiment, ExperimentRow, SimConfig,
    EXPERIMENT_CSV_HEADER,
};
use envreg::mcem::{fit, prepare_response, select_rank, FitConfig};
use envreg::summarize::{biplot_loadings, contour, eigen_summary, rotate_to_contrast};

use crate::artifacts::{covariate_count, load_fit, save_fit, TruthManifest};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, fmt_num, parse_list, parse_vectors, read_matrix, write_json, write_matrix, write_rows};

#[derive(Debug, Default, Args)]
pub struct SimFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// True envelope dimension.
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Number of covariance terms (defaults to q).
    #[arg(long)]
    pub k: Option<usize>,
    /// Standard deviation of the mean coefficients.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
}

impl SimFlags {
    fn apply(&self, cfg: &mut SimConfig) {
        let q_given = self.q.is_some();
        set(&mut cfg.n, self.n);
        set(&mut cfg.p, self.p);
        set(&mut cfg.s, self.s);
        set(&mut cfg.q, self.q);
        set(&mut cfg.tau, self.tau);
        set(&mut cfg.sigma2, self.sigma2);
        match self.k {
            Some(k) => cfg.k = k,
            None if q_given => cfg.k = cfg.q,
            None => {}
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct FitFlags {
    #[arg(long)]
    pub em_max_iters: Option<usize>,
    /// Projector-distance convergence threshold.
    #[arg(long)]
    pub em_tol: Option<f64>,
    /// Sweeps of the first E-step chain (and of the final one).
    #[arg(long)]
    pub mcmc_iter: Option<usize>,
    #[arg(long)]
    pub mcmc_burn: Option<usize>,
    #[arg(long)]
    pub mcmc_thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Sweeps of each warm-started E-step chain.
    #[arg(long)]
    pub warm_iter: Option<usize>,
    #[arg(long)]
    pub warm_burn: Option<usize>,
    /// Do not center the response columns.
    #[arg(long)]
    pub no_center: bool,
}

impl FitFlags {
    fn apply(&self, cfg: &mut FitConfig) {
        set(&mut cfg.em_max_iters, self.em_max_iters);
        set(&mut cfg.em_tol, self.em_tol);
        set(&mut cfg.mcmc.n_iter, self.mcmc_iter);
        set(&mut cfg.mcmc.burn, self.mcmc_burn);
        set(&mut cfg.mcmc.thin, self.mcmc_thin);
        set(&mut cfg.mcmc.chains, self.chains);
        set(&mut cfg.warm_mcmc.n_iter, self.warm_iter);
        set(&mut cfg.warm_mcmc.burn, self.warm_burn);
        set(&mut cfg.warm_mcmc.chains, self.chains);
        set(&mut cfg.warm_mcmc.thin, self.mcmc_thin);
        if self.no_center {
            cfg.center = false;
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for Y.csv, X.csv and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn simulate_cmd(args: &SimulateArgs, run: &RunConfig) -> CliResult<()> {
    let mut cfg = run.simulate.clone();
    args.sim.apply(&mut cfg);
    set(&mut cfg.seed, args.seed);
    cfg.validate()?;
    let (y, x, truth) = simulate(&cfg)?;
    ensure_dir(&args.out)?;
    write_matrix(&args.out.join("Y.csv"), "y", &y)?;
    write_matrix(&args.out.join("X.csv"), "x", &x)?;
    write_json(&args.out.join("truth.json"), &TruthManifest::new(&cfg, &truth))?;
    log::info!("wrote {}x{} responses to {}", cfg.n, cfg.p, args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Response matrix CSV.
    #[arg(long)]
    pub y: PathBuf,
    /// Use Y as given instead of column-centering it.
    #[arg(long)]
    pub no_center: bool,
}

pub fn rank_cmd(args: &RankArgs) -> CliResult<()> {
    let (_, y) = read_matrix(&args.y)?;
    let (yc, _) = prepare_response(&y, !args.no_center);
    println!("{}", select_rank(&yc));
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub x: PathBuf,
    /// Envelope dimension; 0 selects it from the singular values of Y.
    #[arg(long)]
    pub s: Option<usize>,
    /// Covariance terms in the projected regression.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for fit.json and samples.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fit_cmd(args: &FitArgs, run: &RunConfig) -> CliResult<()> {
    let mut cfg = run.fit.clone();
    args.fit.apply(&mut cfg);
    set(&mut cfg.s, args.s);
    set(&mut cfg.k, args.k);
    set(&mut cfg.seed, args.seed);
    cfg.validate()?;
    let (_, y) = read_matrix(&args.y)?;
    let (_, x) = read_matrix(&args.x)?;
    if y.nrows() != x.nrows() {
        return Err(CliError::Data(format!(
            "{} has {} rows but {} has {}",
            args.y.display(),
            y.nrows(),
            args.x.display(),
            x.nrows()
        )));
    }
    let f = fit(&y, &x, &cfg)?;
    ensure_dir(&args.out)?;
    let path = save_fit(&f, &args.out)?;
    log::info!(
        "s = {}, {} EM iterations, converged = {}; wrote {}",
        f.s(),
        f.trace.len(),
        f.converged,
        path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// fit.json written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Two covariate vectors to contrast: "a1,...,aq;b1,...,bq".
    #[arg(long)]
    pub contrast: String,
    /// Covariate vectors to summarize at, ";"-separated (default: the contrast pair).
    #[arg(long)]
    pub at: Option<String>,
    /// Labels for the --at vectors, ";"-separated.
    #[arg(long)]
    pub labels: Option<String>,
    /// 1-based pair of rotated coordinates, e.g. "1,2".
    #[arg(long)]
    pub dims: Option<String>,
    /// Number of features in loadings.csv.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn summarize_cmd(args: &SummarizeArgs, run: &RunConfig) -> CliResult<()> {
    let f = load_fit(&args.fit)?;
    let q = covariate_count(&f)?;
    let contrast = parse_vectors(&args.contrast, q).filter(|v| v.len() == 2).ok_or_else(|| {
        CliError::Usage(format!(
            "malformed --contrast '{}': expected \"a1,...,aq;b1,...,bq\" with q = {q} values on each side of ';'",
            args.contrast
        ))
    })?;
    let (points, labels) = match &args.at {
        Some(text) => {
            let pts = parse_vectors(text, q)
                .ok_or_else(|| CliError::Usage(format!("malformed --at '{text}': expected \";\"-separated vectors of {q} values")))?;
            let labels: Vec<String> = match &args.labels {
                Some(l) => l.split(';').map(|s| s.trim().to_string()).collect(),
                None => (1..=pts.len()).map(|i| format!("x{i}")).collect(),
            };
            if labels.len() != pts.len() {
                return Err(CliError::Usage(format!("--labels has {} entries for {} --at vectors", labels.len(), pts.len())));
            }
            (pts, labels)
        }
        None => (contrast.clone(), vec!["a".to_string(), "b".to_string()]),
    };
    let dims = match &args.dims {
        Some(text) => parse_list::<usize>(text)
            .filter(|d| d.len() == 2)
            .map(|d| [d[0], d[1]])
            .ok_or_else(|| CliError::Usage(format!("malformed --dims '{text}': expected two 1-based indices like \"1,2\"")))?,
        None => run.summarize.dims,
    };
    if dims.contains(&0) {
        return Err(CliError::Usage("--dims indices are 1-based".into()));
    }
    let dims0 = (dims[0] - 1, dims[1] - 1);
    let top = args.top.unwrap_or(run.summarize.top);

    let (rotated, r) = rotate_to_contrast(&f, &contrast[0], &contrast[1])?;
    ensure_dir(&args.out)?;

    let mut eigen_rows = Vec::new();
    let mut contour_rows = Vec::new();
    for (x, label) in points.iter().zip(&labels) {
        for e in eigen_summary(&f, &r, x, dims0)? {
            eigen_rows.push(vec![(e.draw + 1).to_string(), fmt_num(e.lambda1), fmt_num(e.angle), label.clone()]);
        }
        let (c11, c12, c22) = contour(&f, &r, x, dims0)?;
        contour_rows.push(vec![label.clone(), fmt_num(c11), fmt_num(c12), fmt_num(c22)]);
    }
    let header = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    write_rows(&args.out.join("eigensamples.csv"), &header(&["draw", "lambda1", "angle", "label"]), eigen_rows)?;
    write_rows(&args.out.join("contours.csv"), &header(&["label", "c11", "c12", "c22"]), contour_rows)?;
    let loadings = biplot_loadings(&rotated, dims0, top)?;
    write_rows(
        &args.out.join("loadings.csv"),
        &header(&["feature", "dim1", "dim2", "norm"]),
        loadings
            .iter()
            .map(|l| vec![(l.feature + 1).to_string(), fmt_num(l.dim1), fmt_num(l.dim2), fmt_num(l.norm)]),
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub mode: EvalMode,
}

#[derive(Debug, Subcommand)]
pub enum EvalMode {
    /// Per-observation Stein's loss of a fit against a simulation truth.
    Loss(LossArgs),
    /// Loss increase from over-specifying the envelope dimension.
    Misspecification(ExperimentArgs),
    /// Loss increase of the two-stage estimate over the joint fit.
    TwoStage(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// truth.json written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Covariates the losses are evaluated at.
    #[arg(long)]
    pub x: PathBuf,
    /// Output CSV (obs, loss).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub sim: SimFlags,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Fitted dimensions, e.g. "4,8,12" (misspecification only).
    #[arg(long)]
    pub s_tilde: Option<String>,
    /// Covariate counts, e.g. "2,4" (two-stage only).
    #[arg(long)]
    pub q_list: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval_cmd(args: &EvalArgs, run: &RunConfig) -> CliResult<()> {
    match &args.mode {
        EvalMode::Loss(a) => loss_cmd(a),
        EvalMode::Misspecification(a) => experiment_cmd(a, run, true),
        EvalMode::TwoStage(a) => experiment_cmd(a, run, false),
    }
}

fn loss_cmd(args: &LossArgs) -> CliResult<()> {
    let f = load_fit(&args.fit)?;
    let manifest = TruthManifest::load(&args.truth)?;
    let (_, x) = read_matrix(&args.x)?;
    if manifest.config.p != f.p() {
        return Err(CliError::Data(format!("fit has p = {} but the truth manifest has p = {}", f.p(), manifest.config.p)));
    }
    let truth = manifest.truth_at(&x, &args.truth)?;
    let losses = losses_against_truth(&f, &x, &truth)?;
    write_rows(
        &args.out,
        &["obs".to_string(), "loss".to_string()],
        losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), fmt_num(*l)]),
    )?;
    println!("mean_loss {}", fmt_num(losses.iter().sum::<f64>() / losses.len() as f64));
    Ok(())
}

fn parse_counts(text: Option<&String>, fallback: &[usize], flag: &str) -> CliResult<Vec<usize>> {
    match text {
        Some(t) => parse_list::<usize>(t).ok_or_else(|| CliError::Usage(format!("malformed --{flag} '{t}': expected comma-separated integers"))),
        None => Ok(fallback.to_vec()),
    }
}

fn experiment_cmd(args: &ExperimentArgs, run: &RunConfig, misspecification: bool) -> CliResult<()> {
    let mut base = run.simulate.clone();
    args.sim.apply(&mut base);
    let mut template = run.fit.clone();
    args.fit.apply(&mut template);
    let replicates = args.replicates.unwrap_or(run.eval.replicates);
    let seed = args.seed.unwrap_or(run.eval.seed);
    let rows: Vec<ExperimentRow> = if misspecification {
        let s_tilde = parse_counts(args.s_tilde.as_ref(), &run.eval.s_tilde, "s-tilde")?;
        misspecification_experiment(&base, &s_tilde, replicates, seed, &template)?
    } else {
        let q_list = parse_counts(args.q_list.as_ref(), &run.eval.q_list, "q-list")?;
        two_stage_experiment(&base, &q_list, replicates, seed, &template)?
    };
    write_table(&args.out, &rows)?;
    for r in &rows {
        println!("{}", r.csv_line());
    }
    Ok(())
}

fn write_table(path: &Path, rows: &[ExperimentRow]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut text = String::from(EXPERIMENT_CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
