//! The `generate`, `filter`, `compare` and `steady-state` commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rdbpf::io::{self as rio, RecordHeader, RecordLayout, RecordReader, RecordWriter, FORMAT_VERSION};
use rdbpf::{
    simulate_with, BlockParticleFilter, EstimateRecording, MetricTrace64, ObservationField64, SimulationKeys,
    StateField64, StateSpaceModel,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.toml";
pub const TRUTH_FILE: &str = "truth.f64";
pub const OBSERVATION_FILE: &str = "observations.f64";
pub const ESTIMATE_FILE: &str = "estimates.f64";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_FILE: &str = "run.toml";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SNAPSHOT_DIR: &str = "snapshots";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn partial(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Streams a text file to a temporary name and renames it into place.
fn write_text_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let tmp = partial(path);
    let err = |e: std::io::Error| usage(format!("cannot write {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(&tmp).map_err(err)?);
    body(&mut w).map_err(err)?;
    w.flush().map_err(err)?;
    drop(w);
    fs::rename(&tmp, path).map_err(err)
}

fn snapshot_name(prefix: &str, t: f64, species: usize) -> String {
    format!("{prefix}_t{t}_s{}.pgm", species + 1)
}

fn write_snapshots(dir: &Path, prefix: &str, t: f64, x: &StateField64) -> rdbpf::Result<()> {
    let side = x.lattice().side();
    for s in 0..x.n_species() {
        rio::write_pgm(&dir.join(snapshot_name(prefix, t, s)), x.species(s), side)?;
    }
    Ok(())
}

/// Snapshot times keyed by dynamics step.
fn snapshot_steps(cfg: &RunConfig) -> CliResult<Vec<(u64, f64)>> {
    let n_obs = cfg.n_observations()?;
    let mut out = Vec::new();
    for &t in &cfg.output.snapshot_times {
        let k = cfg.observation_index(t)?;
        if k <= n_obs {
            out.push((k * cfg.observation.stride, t));
        } else {
            eprintln!("warning: snapshot time {t} lies beyond the horizon and is skipped");
        }
    }
    Ok(out)
}

/// Derived facts about a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub format_version: u32,
    pub generator: String,
    /// State variables per step, `N_S · side²`.
    pub n_state: usize,
    /// Output variables per observation, `N_Λ · side²`.
    pub n_output: usize,
    pub n_steps: u64,
    pub n_observations: u64,
    pub steady_state: [f64; 2],
    pub truth_file: String,
    pub observation_file: String,
}

/// `manifest.toml`: the resolved configuration a dataset was generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: DatasetInfo,
    pub config: RunConfig,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| usage(format!("no dataset manifest at {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("invalid manifest {}: {e}", path.display())))
    }
}

fn parameter_table<S: Serialize>(section: &S) -> toml::Table {
    toml::Table::try_from(section).expect("config sections serialise to tables")
}

/// Simulates the ground truth and observations into `cfg.output.dir`.
pub fn generate(cfg: &RunConfig, verbose: bool) -> CliResult<Manifest> {
    cfg.validate()?;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let snap_dir = dir.join(SNAPSHOT_DIR);
    create_dir(&snap_dir)?;
    let model = cfg.model()?;
    let obs = cfg.observation_model()?;
    let x0 = cfg.initial_state(&model)?;
    let n_sites = model.lattice().n_sites();
    let n_state = model.state_len();
    let n_output = obs.n_wavelengths() * n_sites;
    let n_steps = cfg.n_steps()?;
    let snaps = snapshot_steps(cfg)?;

    let mut truth = RecordWriter::create(dir.join(TRUTH_FILE), n_state)?;
    let mut observations = RecordWriter::create(dir.join(OBSERVATION_FILE), n_output)?;
    let report = (n_steps / 10).max(1);
    simulate_with(
        &model,
        &obs,
        &x0,
        n_steps,
        cfg.observation.stride,
        SimulationKeys::from_seed(cfg.seeds.simulation),
        |k, x, y| {
            truth.push(k, x.values())?;
            observations.push(k, y.values())?;
            if let Some(&(_, t)) = snaps.iter().find(|(s, _)| *s == k) {
                write_snapshots(&snap_dir, "truth", t, x)?;
            }
            if verbose && k % report == 0 {
                eprintln!("generate: step {k}/{n_steps}");
            }
            Ok(())
        },
    )?;

    let mut params = toml::Table::new();
    params.insert("dynamics".into(), parameter_table(&cfg.dynamics).into());
    params.insert("observation".into(), parameter_table(&cfg.observation).into());
    let header = |kind: &str, layout, n_components| RecordHeader {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        layout,
        side: cfg.lattice.side,
        n_components,
        n_records: 0,
        dt: cfg.dynamics.dt,
        seed: cfg.seeds.simulation,
        steps: Vec::new(),
        parameters: params.clone(),
    };
    truth.finish(header("truth", RecordLayout::SpeciesMajor, model.n_species()))?;
    observations.finish(header("observation", RecordLayout::PixelMajor, obs.n_wavelengths()))?;

    let (z1, z2) = cfg.params().steady_state()?;
    let manifest = Manifest {
        dataset: DatasetInfo {
            format_version: FORMAT_VERSION,
            generator: format!("rdbpf-cli {}", env!("CARGO_PKG_VERSION")),
            n_state,
            n_output,
            n_steps,
            n_observations: n_steps / cfg.observation.stride,
            steady_state: [z1, z2],
            truth_file: TRUTH_FILE.into(),
            observation_file: OBSERVATION_FILE.into(),
        },
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).expect("manifest serialises");
    rio::write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

fn check_dim<T: PartialEq + std::fmt::Display>(what: &str, expected: T, found: T) -> CliResult<()> {
    if expected == found {
        Ok(())
    } else {
        Err(usage(format!(
            "dataset does not match the configuration: {what} expected {expected}, found {found}"
        )))
    }
}

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub time: f64,
    pub rmse_total: f64,
    pub log_evidence: f64,
    pub min_ess: f64,
    pub mean_ess: f64,
    pub degenerate_blocks: usize,
}

/// Outcome of a filter run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: String,
    pub observations: usize,
    pub final_time: f64,
    pub final_rmse_total: f64,
    pub total_log_evidence: f64,
    pub degenerate_events: usize,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    summary: &'a RunSummary,
    config: &'a RunConfig,
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> CliResult<()> {
    write_text_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()
    })
}

pub fn read_trace(dir: &Path) -> CliResult<Vec<TraceRow>> {
    let path = dir.join(TRACE_FILE);
    if !path.is_file() {
        return Err(usage(format!("no {TRACE_FILE} in {}", dir.display())));
    }
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    rdr.deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(|e| usage(format!("malformed {}: {e}", path.display())))
}

/// Runs the block particle filter on the dataset in `data` and writes the
/// metrics, estimates and snapshots to `out`.
pub fn filter(cfg: &RunConfig, data: &Path, out: &Path, verbose: bool) -> CliResult<RunSummary> {
    cfg.validate()?;
    let manifest = Manifest::read(data)?;
    let dc = &manifest.config;
    check_dim("lattice.side", cfg.lattice.side, dc.lattice.side)?;
    check_dim("observation.n_wavelengths", cfg.observation.n_wavelengths, dc.observation.n_wavelengths)?;
    check_dim("observation.stride", cfg.observation.stride, dc.observation.stride)?;
    check_dim("dynamics.dt", cfg.dynamics.dt, dc.dynamics.dt)?;
    let mut reader = RecordReader::open(data.join(&manifest.dataset.observation_file))?;
    let h = reader.header().clone();
    check_dim("observation file side", cfg.lattice.side, h.side)?;
    check_dim("observation file wavelengths", cfg.observation.n_wavelengths, h.n_components)?;
    let n_obs = cfg.n_observations()? as usize;
    if h.n_records < n_obs {
        return Err(usage(format!(
            "dataset holds {} observations, the configured horizon needs {n_obs}",
            h.n_records
        )));
    }

    create_dir(out)?;
    let snap_dir = out.join(SNAPSHOT_DIR);
    create_dir(&snap_dir)?;
    let model = cfg.model()?;
    let obs = cfg.observation_model()?;
    let initial = cfg.initial_distribution(&model)?;
    let snaps = snapshot_steps(cfg)?;
    let mut fc = cfg.filter_config();
    fc.record_estimates = if cfg.output.all_estimates {
        EstimateRecording::All
    } else {
        EstimateRecording::Steps(snaps.iter().map(|(k, _)| k / cfg.observation.stride).collect())
    };
    let mut bpf = BlockParticleFilter::new(&model, &obs, fc, &initial)?;
    let n_sites = model.lattice().n_sites();
    let mut estimates = RecordWriter::create(out.join(ESTIMATE_FILE), model.state_len())?;
    let mut trace = MetricTrace64::default();
    let mut rows = Vec::with_capacity(n_obs);
    let mut degenerate_events = 0;
    let mut failure = None;
    let report = (n_obs / 10).max(1);

    for i in 0..n_obs {
        let (step, values) = reader.next_record::<f64>()?.expect("record count checked above");
        let y = ObservationField64::new(h.n_components, n_sites, values, step as f64 * cfg.dynamics.dt)?;
        let mut rec = match bpf.step(&y) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        if rec.dynamics_step != step {
            return Err(usage(format!(
                "observation {} has dynamics step {step}, the filter expected {}",
                i + 1,
                rec.dynamics_step
            )));
        }
        if !rec.degenerate_blocks.is_empty() {
            degenerate_events += 1;
            if verbose {
                eprintln!(
                    "warning: {} degenerate block(s) at step {step}",
                    rec.degenerate_blocks.len()
                );
            }
        }
        if let Some(x) = rec.estimate.take() {
            estimates.push(step, x.values())?;
            if let Some(&(_, t)) = snaps.iter().find(|(s, _)| *s == step) {
                write_snapshots(&snap_dir, "estimate", t, &x)?;
            }
        }
        let ess_min = rec.ess.iter().copied().fold(f64::INFINITY, f64::min);
        let ess_mean = rec.ess.iter().sum::<f64>() / rec.ess.len() as f64;
        let ll: f64 = rec.log_likelihood.iter().sum();
        let prev = rows.last().map_or(0.0, |r: &TraceRow| r.log_evidence);
        rows.push(TraceRow {
            step,
            time: rec.time,
            rmse_total: rdbpf::metrics::rmse_total(&rec.rmse),
            log_evidence: prev + ll,
            min_ess: ess_min,
            mean_ess: ess_mean,
            degenerate_blocks: rec.degenerate_blocks.len(),
        });
        trace.push(rec.step, rec.time, rec.rmse, rec.log_likelihood, rec.ess);
        if verbose && (i + 1) % report == 0 {
            let r = rows.last().expect("row just pushed");
            eprintln!(
                "filter: step {step}/{} rmse {:.4e} log-evidence {:.6e}",
                n_obs as u64 * cfg.observation.stride,
                r.rmse_total,
                r.log_evidence
            );
        }
    }

    let mut eh = h.clone();
    eh.kind = "estimate".into();
    eh.layout = RecordLayout::SpeciesMajor;
    eh.n_components = model.n_species();
    eh.seed = cfg.seeds.filter;
    estimates.finish(eh)?;
    write_trace(&out.join(TRACE_FILE), &rows)?;
    write_text_atomic(&out.join(METRICS_FILE), |w| trace.write_csv(w))?;

    let last = rows.last();
    let summary = RunSummary {
        status: match &failure {
            None => "completed".into(),
            Some(e) => format!("failed: {e}"),
        },
        observations: rows.len(),
        final_time: last.map_or(0.0, |r| r.time),
        final_rmse_total: last.map_or(0.0, |r| r.rmse_total),
        total_log_evidence: last.map_or(0.0, |r| r.log_evidence),
        degenerate_events,
    };
    let text = toml::to_string(&RunRecord {
        summary: &summary,
        config: cfg,
    })
    .expect("run record serialises");
    rio::write_atomic(&out.join(RUN_FILE), text.as_bytes())?;
    match failure {
        None => Ok(summary),
        Some(e) => Err(e.into()),
    }
}

/// Which run is better on a metric at the final step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    First,
    Second,
    Tie,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: usize,
    /// Lower final RMSE wins.
    pub rmse: Dominance,
    /// Higher final log-evidence wins.
    pub log_evidence: Dominance,
    pub max_abs_rmse_diff: f64,
    pub max_abs_log_evidence_diff: f64,
    pub summary: String,
}

fn dominance(a: f64, b: f64, higher_is_better: bool) -> Dominance {
    if a == b {
        Dominance::Tie
    } else if (a > b) == higher_is_better {
        Dominance::First
    } else {
        Dominance::Second
    }
}

/// Aligns the traces of two filter runs and writes `comparison.csv` and
/// `summary.txt` to `out`.
pub fn compare(a: &Path, b: &Path, out: &Path) -> CliResult<Comparison> {
    let ta = read_trace(a)?;
    let tb = read_trace(b)?;
    if ta.is_empty() || tb.is_empty() {
        return Err(usage("cannot compare empty traces"));
    }
    if ta.len() != tb.len() {
        return Err(usage(format!(
            "misaligned series: {} has {} steps, {} has {}",
            a.display(),
            ta.len(),
            b.display(),
            tb.len()
        )));
    }
    if let Some((ra, rb)) = ta.iter().zip(&tb).find(|(ra, rb)| ra.step != rb.step) {
        return Err(usage(format!("misaligned series: step {} against step {}", ra.step, rb.step)));
    }
    create_dir(out)?;
    let (mut dr, mut de) = (0.0f64, 0.0f64);
    write_text_atomic(&out.join(COMPARISON_FILE), |w| {
        writeln!(
            w,
            "step,time,rmse_a,rmse_b,rmse_diff,log_evidence_a,log_evidence_b,log_evidence_diff"
        )?;
        for (ra, rb) in ta.iter().zip(&tb) {
            let (r, e) = (ra.rmse_total - rb.rmse_total, ra.log_evidence - rb.log_evidence);
            dr = dr.max(r.abs());
            de = de.max(e.abs());
            writeln!(
                w,
                "{},{},{:e},{:e},{r:e},{:e},{:e},{e:e}",
                ra.step, ra.time, ra.rmse_total, rb.rmse_total, ra.log_evidence, rb.log_evidence
            )?;
        }
        Ok(())
    })?;
    let (fa, fb) = (ta.last().expect("non-empty"), tb.last().expect("non-empty"));
    let rmse = dominance(fa.rmse_total, fb.rmse_total, false);
    let log_evidence = dominance(fa.log_evidence, fb.log_evidence, true);
    let name = |d: Dominance| match d {
        Dominance::First => format!("A ({})", a.display()),
        Dominance::Second => format!("B ({})", b.display()),
        Dominance::Tie => "neither (tie)".to_string(),
    };
    let summary = format!(
        "A: {}\nB: {}\nfinal step {} (t = {})\n\
         rmse_total: A = {:e}, B = {:e}; lower is {}\n\
         log_evidence: A = {:e}, B = {:e}; higher is {}\n\
         max |rmse difference| = {dr:e}, max |log-evidence difference| = {de:e}\n",
        a.display(),
        b.display(),
        fa.step,
        fa.time,
        fa.rmse_total,
        fb.rmse_total,
        name(rmse),
        fa.log_evidence,
        fb.log_evidence,
        name(log_evidence),
    );
    rio::write_atomic(&out.join(SUMMARY_FILE), summary.as_bytes())?;
    Ok(Comparison {
        rows: ta.len(),
        rmse,
        log_evidence,
        max_abs_rmse_diff: dr,
        max_abs_log_evidence_diff: de,
        summary,
    })
}

/// Homogeneous fixed point of the configured reaction.
pub fn steady_state(cfg: &RunConfig) -> CliResult<(f64, f64)> {
    Ok(cfg.params().steady_state()?)
}
