//! File formats: grid-field and particle binaries with a small text header,
//! CSV time series and study tables, and the study summary.
//!
//! Binary layout: header lines `key = value` terminated by a line `end`,
//! followed by little-endian `f64` values (row-major for fields; all
//! positions then all velocities for particle snapshots).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{FitOutcome, MassSample, QRecord, RateResult};
use crate::field::{GridField, PeriodicGrid};
use crate::particle::ParticleState;

const FIELD_MAGIC: &str = "meanfield-grid-field v1";
const PARTICLE_MAGIC: &str = "meanfield-particles v1";

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header_bytes(magic: &str, entries: &[(&str, String)]) -> Vec<u8> {
    let mut s = format!("{magic}\n");
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    s.push_str("end\n");
    s.into_bytes()
}

struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    fn read(reader: &mut impl BufRead, magic: &str) -> Result<Self> {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != magic {
            return Err(Error::Format(format!(
                "expected `{magic}`, found `{}`",
                line.trim_end()
            )));
        }
        let mut entries = Vec::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Format("header not terminated by `end`".into()));
            }
            let l = line.trim_end();
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("bad header line `{l}`")))?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Format(format!("missing header key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value `{raw}` for `{key}`")))
    }
}

fn read_f64s(reader: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("expected {count} values")))?;
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn grid_field_bytes(field: &GridField) -> Vec<u8> {
    let g = &field.grid;
    let mut out = header_bytes(
        FIELD_MAGIC,
        &[
            ("dim", g.dim().to_string()),
            ("points", g.points().to_string()),
            ("period", g.period().to_string()),
        ],
    );
    put_f64s(&mut out, &field.values);
    out
}

pub fn grid_field_from_bytes(bytes: &[u8]) -> Result<GridField> {
    let mut reader = BufReader::new(bytes);
    let h = Header::read(&mut reader, FIELD_MAGIC)?;
    let grid = PeriodicGrid::new(h.get("dim")?, h.get("points")?, h.get("period")?)?;
    let values = read_f64s(&mut reader, grid.len())?;
    GridField::from_values(&grid, values)
}

pub fn write_grid_field(path: &Path, field: &GridField) -> Result<()> {
    Ok(std::fs::write(path, grid_field_bytes(field))?)
}

pub fn read_grid_field(path: &Path) -> Result<GridField> {
    grid_field_from_bytes(&std::fs::read(path)?)
}

/// `x,value` rows for a 1-D field.
pub fn grid_field_csv(field: &GridField) -> Result<String> {
    if field.grid.dim() != 1 {
        return Err(Error::Format("CSV export is for 1-D fields".into()));
    }
    let mut s = String::from("x,value\n");
    for (i, v) in field.values.iter().enumerate() {
        let _ = writeln!(s, "{},{:e}", field.grid.coords(i)[0], v);
    }
    Ok(s)
}

pub fn particle_snapshot_bytes(state: &ParticleState) -> Vec<u8> {
    let mut out = header_bytes(
        PARTICLE_MAGIC,
        &[
            ("dim", state.dim.to_string()),
            ("n", state.len().to_string()),
            ("period", state.period.to_string()),
            ("time", state.time.to_string()),
            ("step", state.steps.to_string()),
        ],
    );
    put_f64s(&mut out, &state.positions);
    put_f64s(&mut out, &state.velocities);
    out
}

pub fn particle_snapshot_from_bytes(bytes: &[u8]) -> Result<ParticleState> {
    let mut reader = BufReader::new(bytes);
    let h = Header::read(&mut reader, PARTICLE_MAGIC)?;
    let dim: usize = h.get("dim")?;
    let n: usize = h.get("n")?;
    if !(1..=2).contains(&dim) {
        return Err(Error::Format(format!("unsupported dimension {dim}")));
    }
    let mut values = read_f64s(&mut reader, 2 * n * dim)?;
    let velocities = values.split_off(n * dim);
    Ok(ParticleState {
        dim,
        period: h.get("period")?,
        positions: values,
        velocities,
        time: h.get("time")?,
        steps: h.get("step")?,
    })
}

pub fn write_particle_snapshot(path: &Path, state: &ParticleState) -> Result<()> {
    Ok(std::fs::write(path, particle_snapshot_bytes(state))?)
}

pub fn read_particle_snapshot(path: &Path) -> Result<ParticleState> {
    particle_snapshot_from_bytes(&std::fs::read(path)?)
}

pub fn q_records_csv(records: &[QRecord]) -> String {
    let mut s = String::from("time,kinetic_term,density_term,q_total,stopped\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{}",
            r.time, r.kinetic_term, r.density_term, r.q_total, r.stopped as u8
        );
    }
    s
}

pub fn mass_trace_csv(samples: &[MassSample]) -> String {
    let mut s = String::from("time,mass,min_density\n");
    for m in samples {
        let _ = writeln!(s, "{},{:e},{:e}", m.time, m.mass, m.min_density);
    }
    s
}

pub fn rate_csv(result: &RateResult) -> String {
    let mut s = String::from("N,mean_q,se_q,mean_dist_S,mean_dist_V,censored_count\n");
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{}",
            r.n, r.q.mean, r.q.se, r.dist_s.mean, r.dist_v.mean, r.censored_count
        );
    }
    s
}

/// Every per-N statistic, including standard errors and the `t = 0` values.
pub fn rate_detail_csv(result: &RateResult) -> String {
    let mut s = String::from(
        "N,mean_q,se_q,mean_q0,se_q0,mean_kinetic,se_kinetic,mean_density,se_density,\
mean_dist_S,se_dist_S,mean_dist_V,se_dist_V,mean_dist_S0,se_dist_S0,mean_dist_V0,se_dist_V0,censored_count\n",
    );
    for r in &result.rows {
        let cols = [
            r.q, r.q0, r.kinetic, r.density, r.dist_s, r.dist_v, r.dist_s0, r.dist_v0,
        ];
        let _ = write!(s, "{}", r.n);
        for c in cols {
            let _ = write!(s, ",{:e},{:e}", c.mean, c.se);
        }
        let _ = writeln!(s, ",{}", r.censored_count);
    }
    s
}

/// One row per `(N, sample)`.
pub fn rate_samples_csv(result: &RateResult) -> String {
    let mut s = String::from("N,sample,q0,q_t,dist_S0,dist_V0,dist_S,dist_V,stopped,stop_time\n");
    for o in &result.outcomes {
        let stop_time = o.stop.map(|r| r.time.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            o.n,
            o.sample,
            o.q0.q_total,
            o.q_t.q_total,
            o.dist_s0,
            o.dist_v0,
            o.dist_s,
            o.dist_v,
            o.stop.is_some() as u8,
            stop_time
        );
    }
    s
}

fn fit_lines(s: &mut String, name: &str, fit: &FitOutcome) {
    match fit {
        Ok(f) => {
            let _ = writeln!(s, "slope.{name}: {}", f.slope);
            let _ = writeln!(s, "intercept.{name}: {}", f.intercept);
            let _ = writeln!(s, "r2.{name}: {}", f.r2);
        }
        Err(reason) => {
            let _ = writeln!(s, "slope.{name}: unavailable ({reason})");
        }
    }
}

/// `key: value` summary of a rate study.
pub fn rate_summary(result: &RateResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dim: {}", result.dim);
    let _ = writeln!(s, "beta: {}", result.beta);
    let _ = writeln!(s, "alpha: {}", result.alpha);
    let _ = writeln!(s, "t_final: {}", result.t_final);
    let _ = writeln!(s, "guard_m: {}", result.guard_m);
    let _ = writeln!(s, "samples: {}", result.samples);
    let _ = writeln!(s, "master_seed: {}", result.master_seed);
    let ns: Vec<String> = result.rows.iter().map(|r| r.n.to_string()).collect();
    let _ = writeln!(s, "n_values: {}", ns.join(","));
    let _ = writeln!(s, "target_slope: {}", result.target_slope());
    let _ = writeln!(s, "censored_total: {}", result.censored_total());
    fit_lines(&mut s, "q", &result.fits.q);
    fit_lines(
        &mut s,
        "q_floor_subtracted",
        &result.fits.q_floor_subtracted,
    );
    fit_lines(&mut s, "q0", &result.fits.q0);
    fit_lines(&mut s, "dist_S", &result.fits.dist_s);
    fit_lines(&mut s, "dist_V", &result.fits.dist_v);
    fit_lines(&mut s, "dist_S0", &result.fits.dist_s0);
    s
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
