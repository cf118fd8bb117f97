//! Trajectory CSV ingestion.
//!
//! Schema: header `vehicle_id,time_s,position_ft,speed_fts`, one sample per
//! row, rows sorted by `(vehicle_id, time_s)`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{ProbeTrajectory, TrajectorySample};

pub const CSV_HEADER: [&str; 4] = ["vehicle_id", "time_s", "position_ft", "speed_fts"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    vehicle_id: String,
    time_s: f32,
    position_ft: f32,
    speed_fts: f32,
}

pub fn load_trajectory_pool(path: &Path) -> Result<Vec<ProbeTrajectory>> {
    read_trajectory_pool(std::fs::File::open(path)?)
}

pub fn read_trajectory_pool<R: Read>(reader: R) -> Result<Vec<ProbeTrajectory>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<TrajectorySample>> = HashMap::new();
    for record in rdr.deserialize::<Row>() {
        let row = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                msg: e.to_string(),
            }
        })?;
        let samples = groups.entry(row.vehicle_id.clone()).or_insert_with(|| {
            order.push(row.vehicle_id.clone());
            Vec::new()
        });
        if let Some(prev) = samples.last() {
            if row.time_s == prev.time {
                return Err(Error::Data(format!(
                    "vehicle {}: duplicate sample at t={}",
                    row.vehicle_id, row.time_s
                )));
            }
            if row.time_s < prev.time {
                return Err(Error::Data(format!(
                    "vehicle {}: timestamps out of order ({} after {})",
                    row.vehicle_id, row.time_s, prev.time
                )));
            }
        }
        samples.push(TrajectorySample {
            time: row.time_s,
            position: row.position_ft,
            speed: row.speed_fts,
        });
    }

    order
        .into_iter()
        .map(|id| {
            let samples = groups.remove(&id).unwrap_or_default();
            ProbeTrajectory::new(id, samples)
        })
        .collect()
}

pub fn write_trajectory_pool<W: Write>(writer: W, pool: &[ProbeTrajectory]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    let io = |e: csv::Error| Error::Data(e.to_string());
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for traj in pool {
        for p in traj.samples() {
            wtr.serialize(Row {
                vehicle_id: traj.vehicle_id.clone(),
                time_s: p.time,
                position_ft: p.position,
                speed_fts: p.speed,
            })
            .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
