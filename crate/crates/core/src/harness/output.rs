//! CSV and JSON artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::ensemble::EnsembleSummary;
use crate::harness::stats::{ConvergenceStats, JumpAligned, SweepPoint};
use crate::harness::trajectory::TrajectoryRow;

/// Column order of trajectory files.
pub const TRAJECTORY_HEADER: [&str; 15] = [
    "cycle",
    "time_s",
    "outcome",
    "phase_idx",
    "alpha",
    "F_est",
    "F_real",
    "n_mean_est",
    "p_below_est",
    "p_tag_est",
    "p_above_est",
    "p_below_real",
    "p_tag_real",
    "p_above_real",
    "jump_flag",
];

pub const CURVES_HEADER: [&str; 17] = [
    "cycle",
    "time_s",
    "F_est_mean",
    "F_est_stderr",
    "F_real_mean",
    "F_real_stderr",
    "F_displaced_mean",
    "F_displaced_stderr",
    "p_below_est",
    "p_tag_est",
    "p_above_est",
    "p_below_real",
    "p_tag_real",
    "p_above_real",
    "settled_est",
    "settled_real",
    "settled_threshold",
];

pub const HISTOGRAM_HEADER: [&str; 5] = ["start_cycle", "end_cycle", "start_ms", "count", "cumulative"];

pub const JUMP_HEADER: [&str; 5] = ["offset_cycles", "time_ms", "F_real", "F_est", "events"];

pub const SWEEP_HEADER: [&str; 6] = [
    "n_tag",
    "level",
    "time_to_level_cycles",
    "time_to_level_ms",
    "converged_fraction",
    "mean_converged_p_tag_real",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes rows with a header row; `records` must match `header` in length.
fn write_records<I>(path: &Path, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    for record in records {
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    if rows.is_empty() {
        w.write_record(TRAJECTORY_HEADER).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a trajectory file, rejecting any header other than [`TRAJECTORY_HEADER`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_curves_csv(path: &Path, summary: &EnsembleSummary) -> Result<()> {
    let c = &summary.curves;
    let threshold = summary.config.f_settled.to_string();
    write_records(
        path,
        &CURVES_HEADER,
        (0..c.cycle.len()).map(|k| {
            let mut rec = vec![c.cycle[k].to_string()];
            rec.extend(
                [
                    c.time_s[k],
                    c.f_est_mean[k],
                    c.f_est_stderr[k],
                    c.f_real_mean[k],
                    c.f_real_stderr[k],
                    c.f_displaced_mean[k],
                    c.f_displaced_stderr[k],
                    c.p_below_est[k],
                    c.p_tag_est[k],
                    c.p_above_est[k],
                    c.p_below_real[k],
                    c.p_tag_real[k],
                    c.p_above_real[k],
                    c.settled_est[k],
                    c.settled_real[k],
                ]
                .iter()
                .map(f64::to_string),
            );
            rec.push(threshold.clone());
            rec
        }),
    )
}

pub fn write_histogram_csv(path: &Path, stats: &ConvergenceStats) -> Result<()> {
    write_records(
        path,
        &HISTOGRAM_HEADER,
        stats.bins.iter().map(|b| {
            vec![
                b.start_cycle.to_string(),
                b.end_cycle.to_string(),
                b.start_ms.to_string(),
                b.count.to_string(),
                b.cumulative.to_string(),
            ]
        }),
    )
}

pub fn write_jump_csv(path: &Path, aligned: &JumpAligned) -> Result<()> {
    write_records(
        path,
        &JUMP_HEADER,
        (0..aligned.offsets.len()).map(|k| {
            vec![
                aligned.offsets[k].to_string(),
                aligned.time_ms[k].to_string(),
                aligned.f_real[k].to_string(),
                aligned.f_est[k].to_string(),
                aligned.counts[k].to_string(),
            ]
        }),
    )
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    write_records(
        path,
        &SWEEP_HEADER,
        points.iter().map(|p| {
            vec![
                p.n_tag.to_string(),
                p.level.to_string(),
                opt(p.time_to_level_cycles),
                opt(p.time_to_level_ms),
                p.converged_fraction.to_string(),
                opt(p.stats.mean_converged_p_tag_real),
            ]
        }),
    )
}

/// `dir/name`.
pub fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
