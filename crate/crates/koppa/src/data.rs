//! Task-sequence construction: seeded Gaussian blobs and file loaders.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use koppa_core::linalg::Matrix;
use koppa_core::task::Split;
use koppa_core::TaskData;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const KPDS_MAGIC: &[u8; 4] = b"KPDS";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{0} must be at least 1")]
    Count(&'static str),
    #[error("separation must be finite and non-negative, got {0}")]
    Separation(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("found {found} distinct labels, expected {tasks} tasks x {per_task} classes = {}", tasks * per_task)]
    LabelCount {
        found: usize,
        tasks: usize,
        per_task: usize,
    },
    #[error("not a KPDS file (bad magic)")]
    BadMagic,
    #[error("KPDS file: {0}")]
    Kpds(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

/// Samples kept for testing out of `n`: a fifth, rounded down.
fn test_count(n: usize) -> usize {
    n / 5
}

/// Class-incremental Gaussian blobs. Every class mean is drawn uniformly on
/// the sphere of radius `separation`; samples have unit covariance. Class `c`
/// of task `t` gets the global id `t * C + c`.
pub fn synth_split_gaussians(spec: &SynthSpec) -> Result<Vec<TaskData>, DataError> {
    for (name, v) in [
        ("tasks", spec.tasks),
        ("classes_per_task", spec.classes_per_task),
        ("dim", spec.dim),
        ("samples_per_class", spec.samples_per_class),
    ] {
        if v == 0 {
            return Err(DataError::Count(name));
        }
    }
    if !(spec.separation.is_finite() && spec.separation >= 0.0) {
        return Err(DataError::Separation(spec.separation));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.classes_per_task;
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let mut train = (Vec::new(), Vec::new());
        let mut test = (Vec::new(), Vec::new());
        for k in 0..c {
            let label = t * c + k;
            let mean = sphere_point(&mut rng, spec.dim, spec.separation);
            let n_test = test_count(spec.samples_per_class);
            for s in 0..spec.samples_per_class {
                let row: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + e
                    })
                    .collect();
                let dst = if s < n_test { &mut test } else { &mut train };
                dst.0.push(row);
                dst.1.push(label);
            }
        }
        shuffle_pairs(&mut train, &mut rng);
        shuffle_pairs(&mut test, &mut rng);
        tasks.push(TaskData {
            index: t,
            classes: t * c..(t + 1) * c,
            train: to_split(train, spec.dim),
            test: to_split(test, spec.dim),
        });
    }
    Ok(tasks)
}

fn sphere_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| radius * x / n).collect();
        }
    }
}

fn shuffle_pairs(pairs: &mut (Vec<Vec<f64>>, Vec<usize>), rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..pairs.1.len()).collect();
    order.shuffle(rng);
    pairs.0 = order
        .iter()
        .map(|&i| std::mem::take(&mut pairs.0[i]))
        .collect();
    pairs.1 = order.iter().map(|&i| pairs.1[i]).collect();
}

fn to_split((rows, labels): (Vec<Vec<f64>>, Vec<usize>), dim: usize) -> Split {
    let inputs = if rows.is_empty() {
        Matrix::zeros(0, dim)
    } else {
        Matrix::from_rows(&rows).expect("rows share a dimension")
    };
    Split { inputs, labels }
}

/// Rows and raw labels of a labelled dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u64>,
}

/// Reads a CSV with a header row; the last column is an integer label and
/// the rest are floats.
pub fn read_csv(path: &Path) -> Result<RawDataset, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let width = reader
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .len();
    if width < 2 {
        return Err(DataError::Parse {
            line: 1,
            message: format!("need at least one feature column and a label, found {width} columns"),
        });
    }
    let mut out = RawDataset {
        rows: Vec::new(),
        labels: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(DataError::Parse {
                line,
                message: format!("expected {width} columns, found {}", record.len()),
            });
        }
        let mut row = Vec::with_capacity(width - 1);
        for (col, cell) in record.iter().take(width - 1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::Parse {
                line,
                message: format!("column {}: not a number: {cell:?}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line,
                    message: format!("column {}: non-finite value", col + 1),
                });
            }
            row.push(v);
        }
        let cell = record.get(width - 1).unwrap_or_default();
        let label: u64 = cell.trim().parse().map_err(|_| DataError::Parse {
            line,
            message: format!("label is not a non-negative integer: {cell:?}"),
        })?;
        out.rows.push(row);
        out.labels.push(label);
    }
    Ok(out)
}

/// Reads the binary format: `"KPDS"`, `u32 n`, `u32 d`, `u32 n_classes`, then
/// `n` records of `d` little-endian `f32` values followed by a `u32` label.
pub fn read_kpds(path: &Path) -> Result<RawDataset, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != KPDS_MAGIC {
        return Err(DataError::BadMagic);
    }
    let n = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(io_err(path))? as usize;
    let n_classes = r.read_u32::<LittleEndian>().map_err(io_err(path))? as u64;
    let mut out = RawDataset {
        rows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            let v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| DataError::Kpds(format!("truncated at record {i}")))?;
            row.push(v as f64);
        }
        let label = r
            .read_u32::<LittleEndian>()
            .map_err(|_| DataError::Kpds(format!("truncated at record {i}")))?
            as u64;
        if label >= n_classes {
            return Err(DataError::Kpds(format!(
                "record {i}: label {label} outside 0..{n_classes}"
            )));
        }
        out.rows.push(row);
        out.labels.push(label);
    }
    Ok(out)
}

pub fn write_kpds(path: &Path, data: &RawDataset) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let d = data.rows.first().map_or(0, Vec::len);
    let n_classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(KPDS_MAGIC)?;
        w.write_u32::<LittleEndian>(data.rows.len() as u32)?;
        w.write_u32::<LittleEndian>(d as u32)?;
        w.write_u32::<LittleEndian>(n_classes as u32)?;
        for (row, &label) in data.rows.iter().zip(&data.labels) {
            for &v in row {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
            w.write_u32::<LittleEndian>(label as u32)?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

/// Shuffles the distinct labels by `seed`, assigns them to tasks in
/// contiguous runs of `classes_per_task`, and splits every class 80/20.
pub fn partition_tasks(
    data: &RawDataset,
    tasks: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<Vec<TaskData>, DataError> {
    if tasks == 0 {
        return Err(DataError::Count("tasks"));
    }
    if classes_per_task == 0 {
        return Err(DataError::Count("classes_per_task"));
    }
    let mut by_class: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in data.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.len() != tasks * classes_per_task {
        return Err(DataError::LabelCount {
            found: by_class.len(),
            tasks,
            per_task: classes_per_task,
        });
    }
    let dim = data.rows.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u64> = by_class.keys().copied().collect();
    order.shuffle(&mut rng);

    let mut out = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let mut train = (Vec::new(), Vec::new());
        let mut test = (Vec::new(), Vec::new());
        for k in 0..classes_per_task {
            let raw = order[t * classes_per_task + k];
            let global = t * classes_per_task + k;
            let mut members = by_class[&raw].clone();
            members.shuffle(&mut rng);
            let n_test = test_count(members.len());
            for (j, &i) in members.iter().enumerate() {
                let dst = if j < n_test { &mut test } else { &mut train };
                dst.0.push(data.rows[i].clone());
                dst.1.push(global);
            }
        }
        shuffle_pairs(&mut train, &mut rng);
        shuffle_pairs(&mut test, &mut rng);
        out.push(TaskData {
            index: t,
            classes: t * classes_per_task..(t + 1) * classes_per_task,
            train: to_split(train, dim),
            test: to_split(test, dim),
        });
    }
    Ok(out)
}

pub fn load_csv_tasks(
    path: &Path,
    tasks: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<Vec<TaskData>, DataError> {
    partition_tasks(&read_csv(path)?, tasks, classes_per_task, seed)
}

pub fn load_kpds_tasks(
    path: &Path,
    tasks: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<Vec<TaskData>, DataError> {
    partition_tasks(&read_kpds(path)?, tasks, classes_per_task, seed)
}
