//! CSV and JSON outputs: metrics, spike rasters, weight dumps, manifests.
//!
//! Metrics CSV columns: `iteration,phase,loss,prediction_error,spikes_recurrent,runtime_s`
//! (`prediction_error` is empty for regression tasks). Raster CSV columns:
//! `neuron_id,time_step`. Weight CSV columns: `projection,source,target,weight`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::training::IterationMetrics;
use super::{ProjectionKind, WeightSnapshot};

pub fn write_metrics_csv(path: &Path, rows: &[IterationMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<IterationMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterRow {
    pub neuron_id: u32,
    pub time_step: i64,
}

pub fn write_raster_csv(path: &Path, spikes: &[(u32, i64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    // header even for an empty raster
    w.write_record(["neuron_id", "time_step"])?;
    for &(n, t) in spikes {
        w.write_record([n.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raster_csv(path: &Path) -> Result<Vec<(u32, i64)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<RasterRow>()
        .map(|row| row.map(|x| (x.neuron_id, x.time_step)).map_err(Into::into))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub projection: ProjectionKind,
    pub source: u32,
    pub target: u32,
    pub weight: f64,
}

pub fn write_weights_csv(path: &Path, w: &WeightSnapshot) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    // explicit header so an empty dump still has one
    out.write_record(["projection", "source", "target", "weight"])?;
    for (kind, rows) in [
        (ProjectionKind::Input, &w.input),
        (ProjectionKind::Recurrent, &w.recurrent),
        (ProjectionKind::Output, &w.output),
    ] {
        for &(source, target, weight) in rows {
            out.serialize(WeightRow {
                projection: kind,
                source,
                target,
                weight,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_weights_csv(path: &Path) -> Result<WeightSnapshot> {
    let mut r = csv::Reader::from_path(path)?;
    let mut snap = WeightSnapshot {
        input: vec![],
        recurrent: vec![],
        output: vec![],
    };
    for row in r.deserialize::<WeightRow>() {
        let row = row?;
        let dst = match row.projection {
            ProjectionKind::Input => &mut snap.input,
            ProjectionKind::Recurrent => &mut snap.recurrent,
            ProjectionKind::Output => &mut snap.output,
        };
        dst.push((row.source, row.target, row.weight));
    }
    Ok(snap)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::training::Phase;

    #[test]
    fn metrics_round_trip_with_empty_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            IterationMetrics {
                iteration: 0,
                phase: Phase::Train,
                loss: 0.25,
                prediction_error: None,
                spikes_recurrent: 7,
                runtime_s: 0.01,
            },
            IterationMetrics {
                iteration: 0,
                phase: Phase::Test,
                loss: 1e-17,
                prediction_error: Some(0.5),
                spikes_recurrent: 0,
                runtime_s: 0.0,
            },
        ];
        write_metrics_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,phase,loss,prediction_error,spikes_recurrent,runtime_s\n"));
        assert!(text.contains("0,train,0.25,,7,0.01"));
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
    }

    #[test]
    fn raster_and_weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_raster_csv(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "neuron_id,time_step\n");
        write_raster_csv(&p, &[(3, 17), (0, 18)]).unwrap();
        assert_eq!(read_raster_csv(&p).unwrap(), vec![(3, 17), (0, 18)]);

        let snap = WeightSnapshot {
            input: vec![(0, 1, 0.1)],
            recurrent: vec![(1, 0, -2.5e-8)],
            output: vec![(2, 0, 1.0 / 3.0)],
        };
        let p = dir.path().join("w.csv");
        write_weights_csv(&p, &snap).unwrap();
        assert_eq!(read_weights_csv(&p).unwrap(), snap);
    }
}
