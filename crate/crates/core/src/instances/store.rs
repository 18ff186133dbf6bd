//! Instance store: `manifest.csv` (instance_id, patient_id, start, end,
//! shift_family, label) plus one `matrices/inst_NNNNNN.bin` per instance
//! holding the `6 × n_cols` matrix as row-major little-endian `f64`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Interval, TimeSeriesInstance, N_CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StoredInstance {
    pub instance_id: usize,
    pub instance: TimeSeriesInstance,
}

fn matrix_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("matrices").join(format!("inst_{id:06}.bin"))
}

pub fn write_instance_store<I>(dir: &Path, instances: I) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = TimeSeriesInstance>,
{
    fs::create_dir_all(dir.join("matrices"))?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = BufWriter::new(fs::File::create(&manifest_path)?);
    writeln!(manifest, "instance_id,patient_id,start,end,shift_family,label,n_cols")?;
    let mut written = vec![manifest_path];
    for (id, inst) in instances.into_iter().enumerate() {
        writeln!(
            manifest,
            "{id},{},{},{},{},{},{}",
            inst.patient_id, inst.interval.start, inst.interval.end, inst.interval.shift_hours, inst.label, inst.n_cols
        )?;
        let path = matrix_path(dir, id);
        let mut bytes = Vec::with_capacity(inst.data.len() * 8);
        for x in &inst.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(&path, bytes)?;
        written.push(path);
    }
    manifest.flush()?;
    Ok(written)
}

/// Streams instances back in manifest order.
pub fn read_instance_store(dir: &Path) -> Result<impl Iterator<Item = Result<StoredInstance>>> {
    let manifest_path = dir.join("manifest.csv");
    let mut rdr = csv::Reader::from_path(&manifest_path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{}: bad {what}", manifest_path.display()));
        if rec.len() != 7 {
            return Err(bad("column count"));
        }
        let id: usize = rec[0].parse().map_err(|_| bad("instance_id"))?;
        let patient_id: u32 = rec[1].parse().map_err(|_| bad("patient_id"))?;
        let start: f64 = rec[2].parse().map_err(|_| bad("start"))?;
        let end: f64 = rec[3].parse().map_err(|_| bad("end"))?;
        let shift: f64 = rec[4].parse().map_err(|_| bad("shift_family"))?;
        let label: u8 = rec[5].parse().map_err(|_| bad("label"))?;
        let n_cols: usize = rec[6].parse().map_err(|_| bad("n_cols"))?;
        rows.push((id, patient_id, Interval { start, end, shift_hours: shift }, label, n_cols));
    }
    let dir = dir.to_path_buf();
    Ok(rows.into_iter().map(move |(id, patient_id, interval, label, n_cols)| {
        let path = matrix_path(&dir, id);
        let bytes = fs::read(&path)?;
        if bytes.len() != N_CHANNELS * n_cols * 8 {
            return Err(Error::Format(format!(
                "{}: expected {} bytes, found {}",
                path.display(),
                N_CHANNELS * n_cols * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(StoredInstance {
            instance_id: id,
            instance: TimeSeriesInstance {
                patient_id,
                interval,
                label,
                n_cols,
                data,
            },
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trip_little_endian() {
        let inst = TimeSeriesInstance {
            patient_id: 7,
            interval: Interval {
                start: 8.0,
                end: 32.0,
                shift_hours: 8.0,
            },
            label: 1,
            n_cols: 4,
            data: (0..24).map(|i| i as f64 * 0.5 - 3.0).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let files = write_instance_store(dir.path(), vec![inst.clone()]).unwrap();
        assert_eq!(files.len(), 2);
        let raw = fs::read(&files[1]).unwrap();
        assert_eq!(&raw[..8], &(-3.0f64).to_le_bytes());
        let back: Vec<_> = read_instance_store(dir.path()).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(back, vec![StoredInstance { instance_id: 0, instance: inst }]);
    }
}
