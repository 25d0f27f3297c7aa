//! `run`, `sweep` and `evaluate` behind the `reed` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use reed_core::orchestrator::{format_mean_sd, run_experiment, Method, RunConfig, RunError, Summary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("no reference run for {name} seed {seed} in {dir}")]
    MissingReference { name: String, seed: u64, dir: PathBuf },
    #[error("budget {budget} is not divisible into {sessions} sessions")]
    Budget { budget: usize, sessions: usize },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::from_toml(&read(p)?).map_err(|e| CliError::Parse {
            path: p.into(),
            message: e.to_string(),
        }),
    }
}

pub fn load_summary(dir: &Path) -> Result<Summary, CliError> {
    let path = dir.join("summary.json");
    serde_json::from_str(&read(&path)?).map_err(|e| CliError::Parse {
        path,
        message: e.to_string(),
    })
}

fn save_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    write(&dir.join("summary.json"), &serde_json::to_string_pretty(summary).expect("summary serializes"))
}

/// Trains one run into `out`, optionally scoring it against a finished reference run.
pub fn run(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    method: Option<&str>,
    reference: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(m) = method {
        cfg = m.parse::<Method>()?.apply(&cfg);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    execute(cfg, out, reference)
}

fn execute(cfg: RunConfig, out: &Path, reference: Option<&Path>) -> Result<(), CliError> {
    eprintln!("{} seed {} -> {}", cfg.name, cfg.seed, out.display());
    let started = std::time::Instant::now();
    let mut output = run_experiment(cfg)?;
    if let Some(dir) = reference {
        output.summary.score_against(&load_summary(dir)?.eval)?;
    }
    output.write(out)?;
    let s = &output.summary;
    eprintln!(
        "  done in {:.1}s: final eval return {:.3}, labels {}, normalized {}",
        started.elapsed().as_secs_f64(),
        s.final_eval_return.unwrap_or(f64::NAN),
        s.labels,
        s.normalized_return.map_or("-".into(), |v| format!("{v:.3}"))
    );
    Ok(())
}

/// Runs an experiment whose feedback sessions are answered over HTTP; the
/// service stays up after training ends.
pub fn serve(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    addr: &str,
    static_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    use reed_core::env::make_env;
    use reed_core::orchestrator::{human_channel, Experiment, FeedbackError};
    use reed_server::{attach, router, Store};

    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let spec = make_env(&cfg.env).map_err(RunError::from)?.spec().clone();
    let (labeler, endpoint) = human_channel(spec, std::time::Duration::from_secs(1));
    let store = Store::shared();
    attach(endpoint, store.clone());
    let mut exp = Experiment::with_labeler(cfg, Box::new(labeler))?;
    let out = out.to_path_buf();
    let progress = store.clone();
    let trainer = std::thread::spawn(move || -> Result<(), RunError> {
        let mut waiting = false;
        while !exp.is_finished() {
            match exp.advance() {
                Ok(()) => waiting = false,
                Err(RunError::Feedback(FeedbackError::Timeout(session))) => {
                    if !waiting {
                        eprintln!("waiting for labels on session {session}");
                        waiting = true;
                    }
                    continue;
                }
                Err(e) => return Err(e),
            }
            if exp.step() % 100 == 0 {
                progress.lock().unwrap_or_else(|e| e.into_inner()).set_experiment_step(exp.step());
            }
        }
        let output = exp.finish()?;
        output.write(&out)?;
        progress.lock().unwrap_or_else(|e| e.into_inner()).mark_finished();
        eprintln!("training finished; outputs in {}", out.display());
        Ok(())
    });
    let app = router(store, static_dir);
    eprintln!("labelling service on http://{addr}");
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: PathBuf::from(addr),
        source,
    })?;
    runtime
        .block_on(reed_server::serve(addr, app))
        .map_err(|source| CliError::Io {
            path: PathBuf::from(addr),
            source,
        })?;
    trainer.join().expect("trainer thread")?;
    Ok(())
}

/// A sweep: every method × budget × seed over one base config.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct Grid {
    /// Base config, relative to the grid file.
    pub base: Option<PathBuf>,
    /// Output root, relative to the grid file.
    pub out: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Budgets to sweep; `M` is rescaled so the session count stays that of the base.
    #[serde(default)]
    pub budgets: Vec<usize>,
}

/// Output directory of one grid cell.
pub fn run_dir(root: &Path, method: Method, budget: usize, seed: u64) -> PathBuf {
    match method {
        Method::Reference => root.join("reference").join(format!("seed{seed}")),
        m => root.join(m.as_str()).join(format!("b{budget}")).join(format!("seed{seed}")),
    }
}

/// Rescales `queries_per_session` so that `budget` spreads over the base session count.
pub fn with_budget(base: &RunConfig, budget: usize) -> Result<RunConfig, CliError> {
    let sessions = base.feedback.sessions().max(1);
    if !budget.is_multiple_of(sessions) {
        return Err(CliError::Budget { budget, sessions });
    }
    let mut cfg = base.clone();
    cfg.feedback.budget = budget;
    if budget > 0 {
        cfg.feedback.queries_per_session = budget / sessions;
    }
    Ok(cfg)
}

/// Runs every cell of `grid`; cells with an existing summary are skipped.
pub fn sweep(grid_path: &Path) -> Result<(), CliError> {
    let grid: Grid = toml::from_str(&read(grid_path)?).map_err(|e| CliError::Parse {
        path: grid_path.into(),
        message: e.to_string(),
    })?;
    let root_dir = grid_path.parent().unwrap_or(Path::new("."));
    let base = load_config(grid.base.as_ref().map(|b| root_dir.join(b)).as_deref())?;
    let out = root_dir.join(&grid.out);
    let budgets = if grid.budgets.is_empty() {
        vec![base.feedback.budget]
    } else {
        grid.budgets.clone()
    };
    for &seed in &grid.seeds {
        for &method in &grid.methods {
            let cells: Vec<usize> = if method == Method::Reference { vec![0] } else { budgets.clone() };
            for budget in cells {
                let dir = run_dir(&out, method, budget, seed);
                if dir.join("summary.json").exists() {
                    continue;
                }
                let mut cfg = match method {
                    Method::Reference => method.apply(&base),
                    m => m.apply(&with_budget(&base, budget)?),
                };
                cfg.seed = seed;
                execute(cfg, &dir, None)?;
            }
        }
    }
    Ok(())
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Io {
        path: dir.into(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_summaries(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "summary.json") {
            out.push(p.parent().expect("file has a parent").to_path_buf());
        }
    }
    Ok(())
}

/// Per-seed scores of one method at one budget.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: String,
    pub budget: u64,
    pub seeds: Vec<u64>,
    pub normalized: Vec<f64>,
    pub final_window: Vec<f64>,
}

/// Scores every run under `root` against the reference run of its seed,
/// rewrites its `summary.json`, writes `evaluation.json` and returns the table.
pub fn evaluate(root: &Path) -> Result<String, CliError> {
    let mut dirs = Vec::new();
    find_summaries(root, &mut dirs)?;
    let mut summaries = Vec::new();
    for d in dirs {
        summaries.push((load_summary(&d)?, d));
    }
    let references: BTreeMap<(String, u64, u64), Summary> = summaries
        .iter()
        .filter(|(s, _)| s.name == Method::Reference.as_str())
        .map(|(s, _)| ((s.env.clone(), s.seed, s.total_steps), s.clone()))
        .collect();
    let mut rows: BTreeMap<(String, u64), Row> = BTreeMap::new();
    for (mut s, dir) in summaries {
        if s.name == Method::Reference.as_str() {
            continue;
        }
        let reference = references
            .get(&(s.env.clone(), s.seed, s.total_steps))
            .ok_or_else(|| CliError::MissingReference {
                name: s.name.clone(),
                seed: s.seed,
                dir: dir.clone(),
            })?;
        s.score_against(&reference.eval)?;
        save_summary(&dir, &s)?;
        let row = rows.entry((s.name.clone(), s.budget)).or_insert_with(|| Row {
            method: s.name.clone(),
            budget: s.budget,
            ..Row::default()
        });
        row.seeds.push(s.seed);
        row.normalized.push(s.normalized_return.expect("scored"));
        if let Some(f) = s.final_window_return {
            row.final_window.push(f);
        }
    }
    let rows: Vec<Row> = rows.into_values().collect();
    write(
        &root.join("evaluation.json"),
        &serde_json::to_string_pretty(&rows).expect("rows serialize"),
    )?;
    Ok(render_table(&rows))
}

pub fn render_table(rows: &[Row]) -> String {
    let mut out = format!("{:<18} {:>6} {:>5}  {:<12} {:<12}\n", "method", "budget", "seeds", "normalized", "final_window");
    for r in rows {
        let fw = if r.final_window.is_empty() {
            "-".into()
        } else {
            format_mean_sd(&r.final_window)
        };
        out.push_str(&format!(
            "{:<18} {:>6} {:>5}  {:<12} {:<12}\n",
            r.method,
            r.budget,
            r.seeds.len(),
            format_mean_sd(&r.normalized),
            fw
        ));
    }
    out
}
