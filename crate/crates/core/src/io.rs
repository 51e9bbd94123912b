//! Trajectory CSV files and reduced-model artifacts.
//!
//! Trajectories are written as `t, <body>_x, <body>_y, <body>_z, <body>_vx,
//! <body>_vy, <body>_vz, ...` with one row per sample. Numbers use the
//! shortest decimal that reads back to the same `f64`, so a write/read cycle
//! is lossless.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Sample, Trajectory, TrajectoryMeta};
use crate::reduction::ReducedModel;

pub const MODEL_FORMAT: &str = "obsim-reduced-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad trajectory header: {0}")]
    Header(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("not a model artifact (format `{0}`)")]
    Format(String),
    #[error("unsupported model version {found} (expected {MODEL_VERSION})")]
    Version { found: u32 },
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Body names in coordinate order, one per three labels (`Earth_x`, ...).
fn bodies_of(labels: &[String]) -> Result<Vec<String>> {
    if labels.len() % 3 != 0 {
        return Err(IoError::Header(format!("{} coordinate labels", labels.len())));
    }
    labels
        .chunks(3)
        .map(|c| {
            let body = c[0]
                .strip_suffix("_x")
                .ok_or_else(|| IoError::Header(format!("label `{}`", c[0])))?;
            if c[1] != format!("{body}_y") || c[2] != format!("{body}_z") {
                return Err(IoError::Header(format!("labels {c:?}")));
            }
            Ok(body.to_string())
        })
        .collect()
}

fn header(bodies: &[String]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for b in bodies {
        for s in ["x", "y", "z", "vx", "vy", "vz"] {
            h.push(format!("{b}_{s}"));
        }
    }
    h
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let bodies = bodies_of(&traj.meta.labels)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(&bodies))?;
    let mut row = Vec::with_capacity(1 + 6 * bodies.len());
    for s in &traj.samples {
        row.clear();
        row.push(s.t.to_string());
        for k in 0..bodies.len() {
            row.extend(s.q[3 * k..3 * k + 3].iter().map(f64::to_string));
            row.extend(s.qdot[3 * k..3 * k + 3].iter().map(f64::to_string));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(r);
    let cols: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if cols.first().map(String::as_str) != Some("t") || (cols.len() - 1) % 6 != 0 {
        return Err(IoError::Header(cols.join(",")));
    }
    let mut bodies = Vec::new();
    for group in cols[1..].chunks(6) {
        let body = group[0]
            .strip_suffix("_x")
            .ok_or_else(|| IoError::Header(group[0].clone()))?;
        if header(&[body.to_string()])[1..] != *group {
            return Err(IoError::Header(group.join(",")));
        }
        bodies.push(body.to_string());
    }
    let mut samples = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| IoError::Row {
                    row,
                    msg: format!("`{v}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        let mut q = Vec::with_capacity(3 * bodies.len());
        let mut qdot = Vec::with_capacity(3 * bodies.len());
        for g in vals[1..].chunks(6) {
            q.extend_from_slice(&g[..3]);
            qdot.extend_from_slice(&g[3..]);
        }
        samples.push(Sample { t: vals[0], q, qdot });
    }
    let dt = match samples.as_slice() {
        [a, b, ..] => b.t - a.t,
        _ => 0.0,
    };
    let traj = Trajectory {
        samples,
        meta: TrajectoryMeta {
            system: String::new(),
            dt,
            integrator: String::new(),
            labels: bodies
                .iter()
                .flat_map(|b| ["x", "y", "z"].map(|s| format!("{b}_{s}")))
                .collect(),
        },
    };
    traj.validate().map_err(|msg| IoError::Row { row: 0, msg })?;
    Ok(traj)
}

#[derive(Serialize, Deserialize)]
struct Artifact<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn write_model<W: Write>(model: &ReducedModel, w: W) -> Result<()> {
    let art = Artifact {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model,
    };
    serde_json::to_writer_pretty(w, &art)?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<ReducedModel> {
    let art: Artifact<serde_json::Value> = serde_json::from_reader(r)?;
    if art.format != MODEL_FORMAT {
        return Err(IoError::Format(art.format));
    }
    if art.version != MODEL_VERSION {
        return Err(IoError::Version { found: art.version });
    }
    Ok(serde_json::from_value(art.model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Integrator};
    use crate::reduction::{build_reduced, detect_drive_coordinate, ChartRequest};
    use crate::scenario::{paper_sem, paper_sem_init};

    fn sem_run() -> Trajectory {
        simulate(&paper_sem(), &paper_sem_init(), 0.5, 0.01, Integrator::Rk4).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let traj = sem_run();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "t,Earth_x,Earth_y,Earth_z,Earth_vx,Earth_vy,Earth_vz,Moon_x,Moon_y,Moon_z,Moon_vx,Moon_vy,Moon_vz");
        let back = read_trajectory_csv(&buf[..]).unwrap();
        assert_eq!(back.samples, traj.samples);
        assert_eq!(back.meta.labels, traj.meta.labels);
    }

    #[test]
    fn first_row_echoes_initial_conditions() {
        let mut buf = Vec::new();
        write_trajectory_csv(&sem_run(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        let init = paper_sem_init();
        assert_eq!(row[0], 0.0);
        assert_eq!(&row[1..4], &init.q[..3]);
        assert_eq!(&row[4..7], &init.qdot[..3]);
        assert_eq!(&row[7..10], &init.q[3..]);
        assert_eq!(&row[10..13], &init.qdot[3..]);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(matches!(read_trajectory_csv(&b"time,a_x\n"[..]), Err(IoError::Header(_))));
        let bad = b"t,A_x,A_y,A_z,A_vx,A_vy,A_vz\n0,1,2,3,4,5,oops\n";
        assert!(matches!(read_trajectory_csv(&bad[..]), Err(IoError::Row { row: 1, .. })));
        let backwards = b"t,A_x,A_y,A_z,A_vx,A_vy,A_vz\n1,0,0,0,0,0,0\n0,0,0,0,0,0,0\n";
        assert!(read_trajectory_csv(&backwards[..]).is_err());
    }

    #[test]
    fn model_artifact_round_trip_and_tag_check() {
        let traj = sem_run();
        let drive = detect_drive_coordinate(&traj, &[ChartRequest::Cylindrical("Earth".into())]).unwrap();
        let model = build_reduced(&traj, &drive).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert_eq!(read_model(&buf[..]).unwrap(), model);

        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["version"] = 2.into();
        let err = read_model(serde_json::to_vec(&v).unwrap().as_slice()).unwrap_err();
        assert!(matches!(err, IoError::Version { found: 2 }));
        v["format"] = "something-else".into();
        let err = read_model(serde_json::to_vec(&v).unwrap().as_slice()).unwrap_err();
        assert!(matches!(err, IoError::Format(_)));
    }
}
