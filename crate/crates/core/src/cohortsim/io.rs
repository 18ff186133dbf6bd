//! On-disk cohort layout:
//!
//! ```text
//! <dir>/metadata.csv            id,end_time,cause,died,infection_time,age,sex,ventilation
//! <dir>/lowfreq.csv             id,time,fever,crp,ventilation,age,sex
//! <dir>/patients/patient_NNNNN.csv   minute_index,hr,map,pulse_pressure,sao2,rr
//! <dir>/sim_config.txt          key = value
//! ```
//!
//! Missing vital slots are empty cells. Floats are written in shortest
//! round-trip form so reading back reproduces the cohort bit for bit.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Cause, Cohort, LowFreq, PatientRecord, SimConfig, LOWFREQ_NAMES, N_LOWFREQ, N_VITALS, VITAL_NAMES};
use crate::error::{Error, Result};

fn patient_path(dir: &Path, id: u32) -> PathBuf {
    dir.join("patients").join(format!("patient_{id:05}.csv"))
}

/// Writes the cohort and returns the list of files created, in a stable order.
pub fn write_cohort(dir: &Path, cohort: &[PatientRecord], config: Option<&SimConfig>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("patients"))?;
    let mut written = Vec::new();

    let meta_path = dir.join("metadata.csv");
    let mut meta = BufWriter::new(fs::File::create(&meta_path)?);
    writeln!(meta, "id,end_time,cause,died,infection_time,age,sex,ventilation")?;
    for p in cohort {
        let first = p.lowfreq[0];
        writeln!(
            meta,
            "{},{},{},{},{},{},{},{}",
            p.id,
            p.end_time,
            p.cause.code(),
            u8::from(p.died),
            p.infection_time.map(|t| t.to_string()).unwrap_or_default(),
            first[3],
            first[4],
            first[2],
        )?;
    }
    meta.flush()?;
    written.push(meta_path);

    let low_path = dir.join("lowfreq.csv");
    let mut low = BufWriter::new(fs::File::create(&low_path)?);
    writeln!(low, "id,time,{}", LOWFREQ_NAMES.join(","))?;
    for p in cohort {
        for (k, row) in p.lowfreq.iter().enumerate() {
            write!(low, "{},{}", p.id, k as f64 * super::LOWFREQ_STEP_HOURS)?;
            for x in row {
                write!(low, ",{x}")?;
            }
            writeln!(low)?;
        }
    }
    low.flush()?;
    written.push(low_path);

    for p in cohort {
        let path = patient_path(dir, p.id);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "minute_index,{}", VITAL_NAMES.join(","))?;
        let mut line = String::with_capacity(64);
        for m in 0..p.n_minutes() {
            line.clear();
            line.push_str(&m.to_string());
            for v in 0..N_VITALS {
                line.push(',');
                let x = p.channels[v][m];
                if !x.is_nan() {
                    line.push_str(&x.to_string());
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        written.push(path);
    }

    if let Some(cfg) = config {
        let path = dir.join("sim_config.txt");
        fs::write(&path, cfg.to_kv().to_text())?;
        written.push(path);
    }
    Ok(written)
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, file: &Path) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad {what} `{field}`", file.display())))
}

pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let meta_path = dir.join("metadata.csv");
    let mut rdr = csv::Reader::from_path(&meta_path)?;
    let mut cohort = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 5 {
            return Err(Error::Format(format!("{}: short row", meta_path.display())));
        }
        let id: u32 = parse(&rec[0], "id", &meta_path)?;
        let end_time: f64 = parse(&rec[1], "end_time", &meta_path)?;
        let code: u8 = parse(&rec[2], "cause", &meta_path)?;
        let cause = Cause::from_code(code)
            .ok_or_else(|| Error::Format(format!("{}: unknown cause {code}", meta_path.display())))?;
        let died = parse::<u8>(&rec[3], "died", &meta_path)? == 1;
        let infection_time = if rec[4].trim().is_empty() {
            None
        } else {
            Some(parse(&rec[4], "infection_time", &meta_path)?)
        };
        cohort.push(PatientRecord {
            id,
            end_time,
            cause,
            died,
            infection_time,
            channels: Default::default(),
            lowfreq: Vec::new(),
        });
    }

    let index: std::collections::HashMap<u32, usize> =
        cohort.iter().enumerate().map(|(i, p)| (p.id, i)).collect();

    let low_path = dir.join("lowfreq.csv");
    let mut rdr = csv::Reader::from_path(&low_path)?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 + N_LOWFREQ {
            return Err(Error::Format(format!("{}: expected {} columns", low_path.display(), 2 + N_LOWFREQ)));
        }
        let id: u32 = parse(&rec[0], "id", &low_path)?;
        let &i = index
            .get(&id)
            .ok_or_else(|| Error::Format(format!("{}: unknown patient {id}", low_path.display())))?;
        let mut row: LowFreq = [0.0; N_LOWFREQ];
        for (j, x) in row.iter_mut().enumerate() {
            *x = parse(&rec[2 + j], LOWFREQ_NAMES[j], &low_path)?;
        }
        cohort[i].lowfreq.push(row);
    }

    for p in cohort.iter_mut() {
        let path = patient_path(dir, p.id);
        let mut rdr = csv::Reader::from_path(&path)?;
        let n = p.n_minutes();
        for c in p.channels.iter_mut() {
            c.reserve_exact(n);
        }
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 1 + N_VITALS {
                return Err(Error::Format(format!("{}: expected {} columns", path.display(), 1 + N_VITALS)));
            }
            for v in 0..N_VITALS {
                let cell = rec[1 + v].trim();
                let x = if cell.is_empty() { f32::NAN } else { parse(cell, VITAL_NAMES[v], &path)? };
                p.channels[v].push(x);
            }
        }
        p.check()?;
    }
    Ok(cohort)
}

#[cfg(test)]
mod tests {
    use super::super::generate_cohort;
    use super::*;

    #[test]
    fn write_read_reproduces_cohort() {
        let cfg = SimConfig {
            n_patients: 4,
            mean_los_hours: 72.0,
            icuai_daily_rate: 0.3,
            seed: 9,
            ..SimConfig::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_cohort(dir.path(), &cohort, Some(&cfg)).unwrap();
        assert_eq!(files.len(), 2 + 4 + 1);
        let back = read_cohort(dir.path()).unwrap();
        assert_eq!(back.len(), cohort.len());
        for (a, b) in cohort.iter().zip(&back) {
            assert_eq!(a.end_time.to_bits(), b.end_time.to_bits());
            assert_eq!(a.infection_time, b.infection_time);
            assert_eq!(a.lowfreq, b.lowfreq);
            for v in 0..N_VITALS {
                assert!(a.channels[v]
                    .iter()
                    .zip(&b.channels[v])
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        let kv = crate::kv::KeyValues::parse(&fs::read_to_string(dir.path().join("sim_config.txt")).unwrap()).unwrap();
        assert_eq!(SimConfig::from_kv(&kv).unwrap(), cfg);
    }
}
