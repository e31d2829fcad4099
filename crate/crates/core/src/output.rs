//! CSV and JSON output.
//!
//! Trajectory CSV columns: `t`, then for each vehicle `i` (1-based)
//! `x_i,y_i,z_i,vx_i,vy_i,vz_i,r11_i,…,r33_i,wx_i,wy_i,wz_i,u_i,taux_i,tauy_i,tauz_i`
//! with `R` row-major, followed by `V,rho,W_tran,W_rot,W,gamma_dist` when the
//! run was monitored. Floats use the shortest representation that parses
//! back to the same value.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{ControlOutput, VehicleState};
use crate::error::{Error, Result};
use crate::lie::{mat_from_rows, Rotation, Vec3};
use crate::sim::Trajectory;

const VEHICLE_FIELDS: [&str; 22] = [
    "x", "y", "z", "vx", "vy", "vz", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "wx", "wy", "wz",
    "u", "taux", "tauy", "tauz",
];
const MONITOR_FIELDS: [&str; 6] = ["V", "rho", "W_tran", "W_rot", "W", "gamma_dist"];

pub fn csv_header(vehicles: usize, monitored: bool) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    for i in 1..=vehicles {
        header.extend(VEHICLE_FIELDS.iter().map(|f| format!("{f}_{i}")));
    }
    if monitored {
        header.extend(MONITOR_FIELDS.iter().map(|f| f.to_string()));
    }
    header
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let monitored = traj.monitor.is_some();
    writer.write_record(csv_header(traj.vehicles(), monitored))?;
    let mut row: Vec<String> = Vec::new();
    for k in 0..traj.len() {
        row.clear();
        row.push(traj.times[k].to_string());
        for (s, c) in traj.states[k].iter().zip(&traj.controls[k]) {
            row.extend(s.position.iter().chain(s.velocity.iter()).map(f64::to_string));
            row.extend(s.attitude.rows().iter().flatten().map(f64::to_string));
            row.extend(s.omega.iter().map(f64::to_string));
            row.push(c.thrust.to_string());
            row.extend(c.torque.iter().map(f64::to_string));
        }
        if let Some(m) = traj.monitor.as_ref().map(|m| &m[k]) {
            row.extend([m.v, m.rho, m.w_tran, m.w_rot, m.w, m.gamma_dist].iter().map(f64::to_string));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectory_csv(traj, std::io::BufWriter::new(file))
}

/// Time series read back from a trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordedRun {
    pub times: Vec<f64>,
    pub states: Vec<Vec<VehicleState>>,
    pub controls: Vec<Vec<ControlOutput>>,
}

impl RecordedRun {
    pub fn into_trajectory(self) -> Trajectory {
        let dt = match self.times.as_slice() {
            [a, b, ..] => b - a,
            _ => 0.0,
        };
        let t_final = self.times.last().copied().unwrap_or(0.0);
        Trajectory {
            times: self.times,
            states: self.states,
            controls: self.controls,
            monitor: None,
            dt,
            record_every: 1,
            t_final,
            warnings: Vec::new(),
        }
    }
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<RecordedRun> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let column = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let t_col = column("t")?;
    let mut vehicles = 0;
    while header.iter().any(|h| *h == format!("x_{}", vehicles + 1)) {
        vehicles += 1;
    }
    if vehicles == 0 {
        return Err(Error::Data("no vehicle columns (expected x_1, ...)".into()));
    }
    let cols: Vec<Vec<usize>> = (1..=vehicles)
        .map(|i| VEHICLE_FIELDS.iter().map(|f| column(&format!("{f}_{i}"))).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let mut run = RecordedRun { times: Vec::new(), states: Vec::new(), controls: Vec::new() };
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let value = |c: usize| -> Result<f64> {
            let text = record.get(c).unwrap_or("");
            text.parse::<f64>()
                .map_err(|_| Error::Data(format!("row {}: column '{}' holds '{text}'", line + 1, header[c])))
        };
        let t = value(t_col)?;
        if let Some(&last) = run.times.last() {
            if t <= last {
                return Err(Error::Data(format!("row {}: time {t} does not increase", line + 1)));
            }
        }
        run.times.push(t);
        let mut states = Vec::with_capacity(vehicles);
        let mut controls = Vec::with_capacity(vehicles);
        for c in &cols {
            let v: Vec<f64> = c.iter().map(|&k| value(k)).collect::<Result<_>>()?;
            let rows = [[v[6], v[7], v[8]], [v[9], v[10], v[11]], [v[12], v[13], v[14]]];
            let attitude =
                Rotation::new(mat_from_rows(rows)).map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))?;
            states.push(VehicleState {
                position: Vec3::new(v[0], v[1], v[2]),
                velocity: Vec3::new(v[3], v[4], v[5]),
                attitude,
                omega: Vec3::new(v[15], v[16], v[17]),
            });
            controls.push(ControlOutput { thrust: v[18], torque: Vec3::new(v[19], v[20], v[21]) });
        }
        run.states.push(states);
        run.controls.push(controls);
    }
    Ok(run)
}

pub fn load_trajectory_csv(path: &Path) -> Result<RecordedRun> {
    read_trajectory_csv(std::fs::File::open(path)?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
