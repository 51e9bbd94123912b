//! Batch commands and the trial server behind the `obsim` binary.
//!
//! Exit codes: 0 success, 1 I/O, 2 config error, 3 hypothesis failure
//! (no monotone drive coordinate), 4 numeric failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use obsim::config::{ConfigError, ScenarioConfig};
use obsim::distinguisher::{run_protocol, Candidate, DistinguisherError, DistinguisherReport};
use obsim::dynamics::{simulate, BodySpec, DynamicsError, Trajectory};
use obsim::io::{read_model, read_trajectory_csv, write_model, write_trajectory_csv, IoError};
use obsim::reduction::{build_reduced, detect_drive_coordinate, pad_noninteracting, playback, ReductionError};
use obsim::vrpipe::{encode_pgm, register_checksum, render, RegisterMatrix};
use serde::Serialize;

pub mod serve;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Config(String),
    Hypothesis(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Hypothesis(m) => write!(f, "hypothesis failure: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Dynamics(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Singularity { .. } | DynamicsError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> Self {
        match e {
            ReductionError::NoMonotoneCoordinate { .. } => CliError::Hypothesis(e.to_string()),
            ReductionError::UnknownChartBody(_) | ReductionError::Coupling { .. } => CliError::Config(e.to_string()),
            ReductionError::Dynamics(d) => d.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<DistinguisherError> for CliError {
    fn from(e: DistinguisherError) -> Self {
        match e {
            DistinguisherError::Dynamics(d) => d.into(),
            DistinguisherError::Reduction(r) => r.into(),
            DistinguisherError::Protocol(m) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// The given config file, or the bundled scenario.
pub fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => Ok(ScenarioConfig::from_path(p)?),
        None => Ok(ScenarioConfig::paper_sem()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?))
}

/// Simulate the scenario and write the trajectory CSV. Returns the row count.
pub fn cmd_simulate(config: &ScenarioConfig, out: &Path) -> Result<usize> {
    let system = config.system()?;
    let traj = simulate(
        &system,
        &config.init(),
        config.simulation.duration,
        config.simulation.dt,
        config.integrator(),
    )?;
    write_trajectory_csv(&traj, create(out)?)?;
    Ok(traj.len())
}

fn read_matching(traj: &Path, config: &ScenarioConfig) -> Result<Trajectory> {
    let t = read_trajectory_csv(open(traj)?)?;
    let want = config.system()?.coordinate_labels();
    if t.meta.labels != want {
        return Err(CliError::Config(format!(
            "trajectory columns {:?} do not match the config bodies {:?}",
            t.meta.labels, want
        )));
    }
    Ok(t)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReduceSummary {
    pub status: String,
    pub error: Option<String>,
    pub drive: Option<String>,
    pub margin: Option<f64>,
    pub knots: usize,
    /// Largest playback error over the input samples used as knots.
    pub max_knot_residual: Option<f64>,
    pub model: Option<PathBuf>,
}

/// Sidecar path for the reduction summary, e.g. `model.summary.json`.
pub fn summary_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("summary.json")
}

/// Build a reduced model from a trajectory file. The summary is written next
/// to the model even when the reduction hypothesis fails.
pub fn cmd_reduce(traj: &Path, config: &ScenarioConfig, out: &Path) -> Result<ReduceSummary> {
    let full = read_matching(traj, config)?;
    let knots = Trajectory {
        samples: full.samples.iter().step_by(config.reduction.knot_stride).cloned().collect(),
        meta: full.meta.clone(),
    };
    let mut summary = ReduceSummary {
        status: "ok".into(),
        error: None,
        drive: None,
        margin: None,
        knots: knots.len(),
        max_knot_residual: None,
        model: None,
    };
    let built = detect_drive_coordinate(&knots, &config.charts()).and_then(|d| {
        let m = build_reduced(&knots, &d)?;
        Ok((d, m))
    });
    let (drive, model) = match built {
        Ok(v) => v,
        Err(e) => {
            let err = CliError::from(e);
            summary.status = match err {
                CliError::Hypothesis(_) => "hypothesis_failure".into(),
                _ => "numeric_failure".into(),
            };
            summary.error = Some(err.to_string());
            write_summary(out, &summary)?;
            return Err(err);
        }
    };
    let model = model.with_masses(config.system()?.coordinate_masses())?;
    let back = playback(&model, &knots.times())?;
    let residual = knots
        .samples
        .iter()
        .zip(&back.samples)
        .flat_map(|(a, b)| a.q.iter().zip(&b.q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    write_model(&model, create(out)?)?;
    summary.drive = Some(drive.chart.to_string());
    summary.margin = Some(drive.margin);
    summary.knots = model.knot_count();
    summary.max_knot_residual = Some(residual);
    summary.model = Some(out.to_path_buf());
    write_summary(out, &summary)?;
    Ok(summary)
}

fn write_summary(model_out: &Path, summary: &ReduceSummary) -> Result<()> {
    let w = create(&summary_path(model_out))?;
    serde_json::to_writer_pretty(w, summary).map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateFlag {
    Copy,
    Padded,
    Reduced,
    Kinematic,
}

impl std::str::FromStr for CandidateFlag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "copy" => Ok(CandidateFlag::Copy),
            "padded" => Ok(CandidateFlag::Padded),
            "reduced" => Ok(CandidateFlag::Reduced),
            "kinematic" => Ok(CandidateFlag::Kinematic),
            other => Err(format!("unknown candidate `{other}` (copy, padded, reduced, kinematic)")),
        }
    }
}

/// Build the candidate and run the force-injection protocol on it.
///
/// Reduced candidates come from a recording of `simulation.duration`, or
/// from a saved model when `model` is given.
pub fn cmd_distinguish(
    config: &ScenarioConfig,
    flag: CandidateFlag,
    model: Option<&Path>,
    out: &Path,
) -> Result<DistinguisherReport> {
    let protocol = config.protocol()?;
    let reduced = || -> Result<_> {
        let m = match model {
            Some(p) => read_model(open(p)?)?,
            None => {
                let rec = simulate(
                    &protocol.system,
                    &protocol.init,
                    config.simulation.duration,
                    config.simulation.dt,
                    config.integrator(),
                )?;
                let knots = Trajectory {
                    samples: rec.samples.iter().step_by(config.reduction.knot_stride).cloned().collect(),
                    meta: rec.meta.clone(),
                };
                let d = detect_drive_coordinate(&knots, &config.charts())?;
                build_reduced(&knots, &d)?
            }
        };
        Ok(m.with_masses(protocol.system.coordinate_masses())?)
    };
    let candidate = match flag {
        CandidateFlag::Copy => Candidate::Copy(protocol.system.clone()),
        CandidateFlag::Padded => {
            // One free body far from the scenario, drifting slowly.
            let padded = pad_noninteracting(&protocol.system, vec![BodySpec::free("Ghost", 1.0)])?;
            Candidate::Padded {
                padded,
                extra_q: vec![3.0, 3.0, 0.0],
                extra_qdot: vec![0.0, 0.1, 0.0],
            }
        }
        CandidateFlag::Reduced => Candidate::ReducedInteractive(reduced()?),
        CandidateFlag::Kinematic => Candidate::ReducedKinematic(reduced()?),
    };
    let report = run_protocol(&candidate, &protocol)?;
    serde_json::to_writer_pretty(create(out)?, &report).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(report)
}

/// Render every `render.stride`-th sample to `frame_NNNNN.pgm` in `outdir`.
/// Returns one checksum line per frame.
pub fn cmd_render(traj: &Path, config: &ScenarioConfig, outdir: &Path) -> Result<Vec<String>> {
    let t = read_matching(traj, config)?;
    let system = config.system()?;
    let vp = config.viewport()?;
    let stride = config.render.as_ref().map_or(1, |r| r.stride);
    fs::create_dir_all(outdir)?;
    let mut regs = RegisterMatrix::new(vp.rows, vp.cols, 8);
    let mut lines = Vec::new();
    for (k, s) in t.samples.iter().step_by(stride).enumerate() {
        let frame = render(&system, &s.state(), &vp, &mut regs).map_err(|e| CliError::Numeric(e.to_string()))?;
        let pgm = encode_pgm(&frame).map_err(|e| CliError::Numeric(e.to_string()))?;
        let path = outdir.join(format!("frame_{k:05}.pgm"));
        fs::write(&path, pgm).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let v = frame.checksum();
        let c = register_checksum(&regs, vp.rows, vp.cols).map_err(|e| CliError::Numeric(e.to_string()))?;
        let verdict = if v == c && frame.matches(&regs) { "V=C" } else { "V!=C" };
        lines.push(format!("frame {k:05} t={} V={v:016x} C={c:016x} {verdict}", s.t));
    }
    Ok(lines)
}
