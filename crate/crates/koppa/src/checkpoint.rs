//! Binary checkpoints: `"KOPA"`, `u32` version, then tagged sections
//! (`[u8; 4]` tag, `u64` length, payload). Numbers are little-endian.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use koppa_core::linalg::Matrix;
use koppa_core::model::LinearBlock;
use koppa_core::{
    AttentionMode, CeHead, ModelDims, ModelState, OvaHead, PromptBlock, PromptPool, Prototype,
    PrototypeBuffer, Similarity, SubspaceBasis, SurrogateEncoder, Trainer,
};

use crate::config::RunConfig;
use crate::report::RunReport;

pub const MAGIC: &[u8; 4] = b"KOPA";
pub const VERSION: u32 = 1;

type LE = LittleEndian;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("missing section {0}")]
    Missing(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl From<std::io::Error> for CheckpointError {
    fn from(_: std::io::Error) -> Self {
        CheckpointError::Truncated
    }
}

pub struct Checkpoint {
    pub config: RunConfig,
    pub report: RunReport,
    pub trainer: Trainer,
}

pub fn encode(config: &RunConfig, report: &RunReport, trainer: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();
    section(
        &mut out,
        b"CONF",
        serde_json::to_vec(config).expect("config serialises"),
    );
    section(
        &mut out,
        b"REPT",
        serde_json::to_vec(report).expect("report serialises"),
    );
    section(&mut out, b"MODL", encode_model(&trainer.model));
    let mut subs = Vec::new();
    subs.write_u64::<LE>(trainer.subspace.task_count() as u64)
        .unwrap();
    put_matrix(&mut subs, trainer.subspace.basis());
    section(&mut out, b"SUBS", subs);
    let mut hist = Vec::new();
    put_len(&mut hist, trainer.basis_history.len());
    for &h in &trainer.basis_history {
        put_len(&mut hist, h);
    }
    section(&mut out, b"HIST", hist);
    let mut prot = Vec::new();
    put_len(&mut prot, trainer.buffer.tasks());
    for t in 0..trainer.buffer.tasks() {
        let items = trainer.buffer.task(t);
        put_len(&mut prot, items.len());
        for p in items {
            put_len(&mut prot, p.label);
            put_vec(&mut prot, &p.feature);
        }
    }
    section(&mut out, b"PROT", prot);
    out
}

pub fn save(
    path: &Path,
    config: &RunConfig,
    report: &RunReport,
    trainer: &Trainer,
) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(config, report, trainer)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
    while (r.position() as usize) < bytes.len() {
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag)?;
        let len = r.read_u64::<LE>()? as usize;
        let start = r.position() as usize;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or(CheckpointError::Truncated)?;
        sections.push((tag, &bytes[start..end]));
        r.set_position(end as u64);
    }
    let find = |name: &'static str| {
        sections
            .iter()
            .find(|(tag, _)| tag == name.as_bytes())
            .map(|(_, body)| *body)
            .ok_or(CheckpointError::Missing(name))
    };
    let corrupt = |e: serde_json::Error| CheckpointError::Corrupt(e.to_string());
    let config: RunConfig = serde_json::from_slice(find("CONF")?).map_err(corrupt)?;
    let report: RunReport = serde_json::from_slice(find("REPT")?).map_err(corrupt)?;
    let model = decode_model(&mut Cursor::new(find("MODL")?))?;

    let mut s = Cursor::new(find("SUBS")?);
    let task_count = s.read_u64::<LE>()? as usize;
    let basis = get_matrix(&mut s)?;
    if basis.rows() != model.dims.query {
        return Err(CheckpointError::Corrupt(
            "basis dimension differs from query dimension".into(),
        ));
    }
    let subspace = SubspaceBasis::from_parts(basis, task_count)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut h = Cursor::new(find("HIST")?);
    let n = get_len(&mut h)?;
    let history = (0..n)
        .map(|_| get_len(&mut h))
        .collect::<Result<Vec<_>, _>>()?;

    let mut p = Cursor::new(find("PROT")?);
    let mut buffer = PrototypeBuffer::new();
    for _ in 0..get_len(&mut p)? {
        let count = get_len(&mut p)?;
        let mut items = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let label = get_len(&mut p)?;
            let feature = get_vec(&mut p)?;
            items.push(Prototype { feature, label });
        }
        buffer.push_task(items);
    }

    let trainer = Trainer::from_parts(config.train_config(), model, subspace, buffer, history);
    Ok(Checkpoint {
        config,
        report,
        trainer,
    })
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: Vec<u8>) {
    out.extend_from_slice(tag);
    out.write_u64::<LE>(body.len() as u64).unwrap();
    out.extend_from_slice(&body);
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    out.write_u64::<LE>(n as u64).unwrap();
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    put_len(out, v.len());
    for &x in v {
        out.write_f64::<LE>(x).unwrap();
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_len(out, m.rows());
    put_len(out, m.cols());
    for &x in m.as_slice() {
        out.write_f64::<LE>(x).unwrap();
    }
}

fn get_len(r: &mut Cursor<&[u8]>) -> Result<usize, CheckpointError> {
    let n = r.read_u64::<LE>()?;
    usize::try_from(n).map_err(|_| CheckpointError::Corrupt(format!("length {n} too large")))
}

fn remaining(r: &Cursor<&[u8]>) -> usize {
    r.get_ref().len().saturating_sub(r.position() as usize)
}

fn get_vec(r: &mut Cursor<&[u8]>) -> Result<Vec<f64>, CheckpointError> {
    let n = get_len(r)?;
    if n.saturating_mul(8) > remaining(r) {
        return Err(CheckpointError::Truncated);
    }
    (0..n).map(|_| Ok(r.read_f64::<LE>()?)).collect()
}

fn get_matrix(r: &mut Cursor<&[u8]>) -> Result<Matrix, CheckpointError> {
    let rows = get_len(r)?;
    let cols = get_len(r)?;
    let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
    if n.saturating_mul(8) > remaining(r) {
        return Err(CheckpointError::Truncated);
    }
    let data = (0..n)
        .map(|_| r.read_f64::<LE>())
        .collect::<Result<Vec<_>, _>>()?;
    Matrix::new(rows, cols, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

fn encode_model(m: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    let d = &m.dims;
    for v in [
        d.input,
        d.query,
        d.hidden,
        d.feature,
        d.prompt,
        d.prompts_per_task,
        d.classes_per_task,
    ] {
        put_len(&mut out, v);
    }
    out.push(match m.attention {
        AttentionMode::Koppa => 0,
        AttentionMode::Coda => 1,
    });
    out.push(match m.similarity {
        Similarity::Cosine => 0,
        Similarity::Dot => 1,
    });
    let e = &m.encoder;
    put_matrix(&mut out, &e.w_q);
    put_matrix(&mut out, &e.w1);
    put_vec(&mut out, &e.b1);
    put_matrix(&mut out, &e.v_p);
    put_matrix(&mut out, &e.w2);
    put_vec(&mut out, &e.b2);
    put_len(&mut out, m.pool.tasks());
    for b in m.pool.blocks() {
        put_matrix(&mut out, &b.keys);
        put_matrix(&mut out, &b.prompts);
        match &b.masks {
            Some(mask) => {
                out.push(1);
                put_matrix(&mut out, mask);
            }
            None => out.push(0),
        }
        out.push(b.frozen as u8);
    }
    for blocks in [&m.ce.blocks, &m.ova.blocks] {
        put_len(&mut out, blocks.len());
        for b in blocks {
            put_matrix(&mut out, &b.weights);
            put_vec(&mut out, &b.bias);
        }
    }
    out
}

fn decode_model(r: &mut Cursor<&[u8]>) -> Result<ModelState, CheckpointError> {
    let mut dim = [0usize; 7];
    for d in &mut dim {
        *d = get_len(r)?;
    }
    let dims = ModelDims {
        input: dim[0],
        query: dim[1],
        hidden: dim[2],
        feature: dim[3],
        prompt: dim[4],
        prompts_per_task: dim[5],
        classes_per_task: dim[6],
    };
    let attention = match r.read_u8()? {
        0 => AttentionMode::Koppa,
        1 => AttentionMode::Coda,
        x => return Err(CheckpointError::Corrupt(format!("attention mode {x}"))),
    };
    let similarity = match r.read_u8()? {
        0 => Similarity::Cosine,
        1 => Similarity::Dot,
        x => return Err(CheckpointError::Corrupt(format!("similarity {x}"))),
    };
    let shape = |m: &Matrix, rows: usize, cols: usize, what: &str| {
        if m.shape() == (rows, cols) {
            Ok(())
        } else {
            Err(CheckpointError::Corrupt(format!(
                "{what} has shape {:?}, expected {:?}",
                m.shape(),
                (rows, cols)
            )))
        }
    };
    let w_q = get_matrix(r)?;
    shape(&w_q, dims.query, dims.input, "w_q")?;
    let w1 = get_matrix(r)?;
    shape(&w1, dims.hidden, dims.input, "w1")?;
    let b1 = get_vec(r)?;
    let v_p = get_matrix(r)?;
    shape(&v_p, dims.hidden, dims.prompt, "v_p")?;
    let w2 = get_matrix(r)?;
    shape(&w2, dims.feature, dims.hidden, "w2")?;
    let b2 = get_vec(r)?;
    if b1.len() != dims.hidden || b2.len() != dims.feature {
        return Err(CheckpointError::Corrupt("encoder bias length".into()));
    }
    let encoder = SurrogateEncoder {
        w_q,
        w1,
        b1,
        v_p,
        w2,
        b2,
    };

    let mut pool = PromptPool::new(dims.query, dims.prompt, dims.prompts_per_task);
    let blocks = get_len(r)?;
    for _ in 0..blocks {
        let keys = get_matrix(r)?;
        shape(&keys, dims.prompts_per_task, dims.query, "keys")?;
        let prompts = get_matrix(r)?;
        shape(&prompts, dims.prompts_per_task, dims.prompt, "prompts")?;
        let masks = match r.read_u8()? {
            0 => None,
            _ => {
                let m = get_matrix(r)?;
                shape(&m, dims.prompts_per_task, dims.query, "masks")?;
                Some(m)
            }
        };
        let frozen = r.read_u8()? != 0;
        pool.push_block(PromptBlock {
            keys,
            prompts,
            masks,
            frozen,
        });
    }
    let mut heads = Vec::with_capacity(2);
    for outputs in [dims.classes_per_task, 2 * dims.classes_per_task] {
        let n = get_len(r)?;
        if n != blocks {
            return Err(CheckpointError::Corrupt(
                "head and pool task counts differ".into(),
            ));
        }
        let mut hs = Vec::with_capacity(n);
        for _ in 0..n {
            let weights = get_matrix(r)?;
            shape(&weights, outputs, dims.feature, "head weights")?;
            let bias = get_vec(r)?;
            if bias.len() != outputs {
                return Err(CheckpointError::Corrupt("head bias length".into()));
            }
            hs.push(LinearBlock { weights, bias });
        }
        heads.push(hs);
    }
    let ova_blocks = heads.pop().expect("two heads");
    let ce_blocks = heads.pop().expect("two heads");
    Ok(ModelState {
        dims,
        encoder,
        pool,
        ce: CeHead {
            classes_per_task: dims.classes_per_task,
            blocks: ce_blocks,
        },
        ova: OvaHead {
            classes_per_task: dims.classes_per_task,
            blocks: ova_blocks,
        },
        attention,
        similarity,
    })
}
