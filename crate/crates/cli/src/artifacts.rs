//! Run directories: file contents, atomic writes and checksum manifests.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gridsd2e_core::analysis::{self, Metrics, RateMap, SweepRow, SweepTable};
use gridsd2e_core::config::RunConfig;
use gridsd2e_core::dataset::Dataset;
use gridsd2e_core::pipeline::{Baselines, CorrectionEvent, EpochMetrics, RunMode, RunResult};
use gridsd2e_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<FileEntry>,
}

impl Manifest {
    fn of(files: &[(String, Vec<u8>)]) -> Manifest {
        let mut files: Vec<FileEntry> = files
            .iter()
            .map(|(p, b)| FileEntry {
                path: p.clone(),
                bytes: b.len() as u64,
                sha256: hex::encode(Sha256::digest(b)),
            })
            .collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest { files }
    }

    pub fn get(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        Ok(serde_json::from_slice(&read(&dir.join(MANIFEST))?)?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn rename(from: &Path, to: &Path) -> Result<()> {
    fs::rename(from, to)
        .map_err(|e| Error::io(format!("moving {} to {}", from.display(), to.display()), e))
}

fn manifest_bytes(m: &Manifest) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(m)?;
    b.push(b'\n');
    Ok(b)
}

fn staging_path(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    dir.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Write `files` into a fresh sibling directory, manifest last, then move it
/// over `dir`. A failure leaves any previous `dir` untouched.
pub fn write_run_dir(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Manifest> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let tmp = staging_path(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)
            .map_err(|e| Error::io(format!("clearing {}", tmp.display()), e))?;
    }
    let result = (|| {
        fs::create_dir(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
        for (name, bytes) in files {
            write(&tmp.join(name), bytes)?;
        }
        let manifest = Manifest::of(files);
        write(&tmp.join(MANIFEST), &manifest_bytes(&manifest)?)?;
        if dir.exists() {
            fs::remove_dir_all(dir)
                .map_err(|e| Error::io(format!("replacing {}", dir.display()), e))?;
        }
        rename(&tmp, dir)?;
        Ok(manifest)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

/// Add or replace files in an existing run directory and rewrite its
/// manifest. Each file and the manifest are swapped in by rename.
pub fn add_to_run_dir(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Manifest> {
    let old = Manifest::load(dir)?;
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        write(&tmp, bytes)?;
        rename(&tmp, &dir.join(name))?;
    }
    let names: BTreeSet<String> = old
        .files
        .iter()
        .map(|f| f.path.clone())
        .chain(files.iter().map(|f| f.0.clone()))
        .collect();
    let all = names
        .into_iter()
        .map(|n| Ok((n.clone(), read(&dir.join(&n))?)))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::of(&all);
    let tmp = dir.join(format!(".{MANIFEST}.tmp"));
    write(&tmp, &manifest_bytes(&manifest)?)?;
    rename(&tmp, &dir.join(MANIFEST))?;
    Ok(manifest)
}

/// Every manifest entry exists with the recorded checksum, and every file in
/// the directory is listed.
pub fn verify_run_dir(dir: &Path) -> Result<Manifest> {
    let m = Manifest::load(dir)?;
    for f in &m.files {
        let b = read(&dir.join(&f.path))?;
        if hex::encode(Sha256::digest(&b)) != f.sha256 {
            return Err(Error::State(format!(
                "{} does not match its manifest checksum",
                f.path
            )));
        }
    }
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for e in entries {
        let name = e
            .map_err(|e| Error::io("listing run directory", e))?
            .file_name()
            .to_string_lossy()
            .into_owned();
        if name != MANIFEST && m.get(&name).is_none() {
            return Err(Error::State(format!(
                "{name} is not listed in the manifest"
            )));
        }
    }
    Ok(m)
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("buffering csv", e.into_error()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mode_name(m: RunMode) -> &'static str {
    match m {
        RunMode::Unsupervised => "unsupervised",
        RunMode::Interaction => "interaction",
        RunMode::SelfReinforcement => "self_reinforcement",
    }
}

pub fn config_bytes(config: &RunConfig) -> Result<Vec<u8>> {
    Ok(config.to_toml_string()?.into_bytes())
}

pub fn dataset_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    data.write_csv(&mut b)?;
    Ok(b)
}

pub fn events_csv(runs: &[RunResult], dim: usize) -> Result<Vec<u8>> {
    let mut header: Vec<String> = [
        "mode", "epoch", "sample", "axis", "level", "pre", "post", "clamped",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..dim).map(|a| format!("truth_{a}")));
    let rows = runs.iter().flat_map(|r| {
        r.events.iter().map(move |e| {
            let mut row = vec![
                mode_name(r.mode).to_string(),
                e.epoch.to_string(),
                e.sample.to_string(),
                e.axis.to_string(),
                e.level.to_string(),
                e.pre.to_string(),
                e.post.to_string(),
                e.clamped.to_string(),
            ];
            row.extend(e.truth.iter().map(|v| v.to_string()));
            row
        })
    });
    csv_bytes(&header, rows)
}

/// Events of the first run recorded in an `events.csv`.
pub fn read_events(bytes: &[u8]) -> Result<Vec<CorrectionEvent>> {
    let mut r = csv::Reader::from_reader(bytes);
    let dim = r
        .headers()?
        .iter()
        .filter(|h| h.starts_with("truth_"))
        .count();
    let mut first_mode = None;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if *first_mode.get_or_insert_with(|| rec[0].to_string()) != rec[0] {
            break;
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|e| Error::Shape(format!("events.csv column {i}: {e}")))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|e| Error::Shape(format!("events.csv column {i}: {e}")))
        };
        out.push(CorrectionEvent {
            epoch: int(1)?,
            sample: int(2)?,
            axis: int(3)?,
            level: int(4)?,
            pre: num(5)?,
            post: num(6)?,
            clamped: &rec[7] == "true",
            truth: (0..dim).map(|a| num(8 + a)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn ratemap_csv(map: &RateMap) -> Result<Vec<u8>> {
    let mut header: Vec<String> = (0..map.resolution.len())
        .map(|a| format!("bin_{a}"))
        .collect();
    header.extend(["samples", "events", "rate"].map(String::from));
    let rows = (0..map.cells()).map(|c| {
        let mut row: Vec<String> = map.index(c).iter().map(|i| i.to_string()).collect();
        row.push(map.samples[c].to_string());
        row.push(map.events[c].to_string());
        row.push(opt(map.rate(c)));
        row
    });
    csv_bytes(&header, rows)
}

pub fn autocorr_csv(ac: &[Vec<Option<f64>>]) -> Result<Vec<u8>> {
    let h0 = ac.len() as isize / 2;
    let h1 = ac.first().map_or(0, |r| r.len() as isize / 2);
    let header = ["lag_0", "lag_1", "correlation"].map(String::from);
    let rows = ac.iter().enumerate().flat_map(|(i, row)| {
        row.iter().enumerate().map(move |(j, v)| {
            vec![
                (i as isize - h0).to_string(),
                (j as isize - h1).to_string(),
                opt(*v),
            ]
        })
    });
    csv_bytes(&header, rows)
}

pub fn predictions_csv(data: &Dataset, runs: &[RunResult]) -> Result<Vec<u8>> {
    let d = data.dim();
    let mut header = vec!["mode".to_string(), "t".to_string()];
    header.extend((0..d).map(|a| format!("pos_{a}")));
    header.extend((0..d).map(|a| format!("pred_{a}")));
    let rows = runs.iter().flat_map(|r| {
        r.test_rows
            .iter()
            .zip(&r.exploitation)
            .map(move |(&k, pred)| {
                let mut row = vec![mode_name(r.mode).to_string(), (k + 1).to_string()];
                row.extend(data.labels.row(k).iter().map(|v| v.to_string()));
                row.extend(pred.iter().map(|v| v.to_string()));
                row
            })
    });
    csv_bytes(&header, rows)
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    mode: &'static str,
    depth: usize,
    final_test_rmse: f64,
    test: Metrics,
    baselines: &'a Baselines,
    order_score: Vec<f64>,
    epochs: &'a [EpochMetrics],
}

#[derive(Debug, Serialize)]
struct SpatialSummary {
    delta_frac: f64,
    /// Null when no event or no sample lies near a reference line.
    boundary_affinity: Option<f64>,
    resolution: Vec<usize>,
    corrected_samples: u64,
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    mode: &'static str,
    seed: u64,
    dim: usize,
    samples: usize,
    train_samples: usize,
    test_samples: usize,
    runs: Vec<RunSummary<'a>>,
    spatial: SpatialSummary,
}

/// Everything `run` writes, keyed by file name. Spatial analysis uses the
/// first run's events against its training samples.
pub fn run_files(
    config: &RunConfig,
    data: &Dataset,
    runs: &[RunResult],
) -> Result<Vec<(String, Vec<u8>)>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Empty("no runs to export".into()))?;
    let grid = config.grid()?;
    let train_truth = data.label_rows(&first.train_rows);
    let map = analysis::correction_rate_map(
        &first.events,
        &train_truth,
        grid.bounds(),
        &config.analysis.resolution,
    )?;
    let affinity = analysis::boundary_affinity(
        &first.events,
        &train_truth,
        &grid,
        config.analysis.delta_frac,
    )?;
    let test_truth = data.label_rows(&first.test_rows);
    let mut summaries = Vec::new();
    for r in runs {
        let pred = nalgebra::DMatrix::from_fn(r.exploitation.len(), data.dim(), |i, a| {
            r.exploitation[i][a]
        });
        summaries.push(RunSummary {
            mode: mode_name(r.mode),
            depth: r.depth,
            final_test_rmse: r.final_test_rmse(),
            test: analysis::metrics(&pred, &test_truth)?,
            baselines: &r.baselines,
            order_score: analysis::order_score(r),
            epochs: &r.epochs,
        });
    }
    let metrics = MetricsFile {
        mode: mode_name(first.mode),
        seed: config.seed,
        dim: data.dim(),
        samples: data.len(),
        train_samples: first.train_rows.len(),
        test_samples: first.test_rows.len(),
        runs: summaries,
        spatial: SpatialSummary {
            delta_frac: config.analysis.delta_frac,
            boundary_affinity: affinity,
            resolution: map.resolution.clone(),
            corrected_samples: map.events.iter().sum(),
        },
    };
    let mut metrics_json = serde_json::to_vec_pretty(&metrics)?;
    metrics_json.push(b'\n');
    let mut files = vec![
        ("config.toml".to_string(), config_bytes(config)?),
        ("metrics.json".to_string(), metrics_json),
        ("events.csv".to_string(), events_csv(runs, data.dim())?),
        ("ratemap.csv".to_string(), ratemap_csv(&map)?),
        ("predictions.csv".to_string(), predictions_csv(data, runs)?),
    ];
    if data.dim() == 2 {
        files.push((
            "autocorr.csv".to_string(),
            autocorr_csv(&analysis::autocorrelogram(&map)?)?,
        ));
    }
    Ok(files)
}

/// Deterministic sweep columns; wall time goes to `timing.csv`.
pub fn sweep_csv(table: &SweepTable) -> Result<Vec<u8>> {
    let header = [
        "n",
        "test_rmse",
        "interaction_cost",
        "occupied_cells",
        "level_mismatch",
        "error",
    ]
    .map(String::from);
    let rows = table.rows.iter().map(|r| {
        vec![
            r.n.to_string(),
            r.test_rmse.to_string(),
            r.interaction_cost.to_string(),
            r.occupied_cells.to_string(),
            r.level_mismatch
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            r.error.clone().unwrap_or_default(),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn timing_csv(table: &SweepTable) -> Result<Vec<u8>> {
    let header = ["n", "wall_ms"].map(String::from);
    csv_bytes(
        &header,
        table
            .rows
            .iter()
            .map(|r| vec![r.n.to_string(), format!("{:.3}", r.wall_ms)]),
    )
}

pub fn read_sweep(bytes: &[u8], dim: usize) -> Result<SweepTable> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad =
            |what: &str| Error::Shape(format!("sweep.csv: bad {what} in {:?}", rec.as_slice()));
        let level_mismatch = if rec[4].is_empty() {
            Vec::new()
        } else {
            rec[4]
                .split(';')
                .map(|v| v.parse().map_err(|_| bad("level_mismatch")))
                .collect::<Result<_>>()?
        };
        rows.push(SweepRow {
            n: rec[0].parse().map_err(|_| bad("n"))?,
            test_rmse: rec[1].parse().map_err(|_| bad("test_rmse"))?,
            interaction_cost: rec[2].parse().map_err(|_| bad("interaction_cost"))?,
            occupied_cells: rec[3].parse().map_err(|_| bad("occupied_cells"))?,
            level_mismatch,
            wall_ms: 0.0,
            error: (!rec[5].is_empty()).then(|| rec[5].to_string()),
        });
    }
    Ok(SweepTable { dim, rows })
}
