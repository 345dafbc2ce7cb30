//! Binary checkpoints: magic `ACGS`, u32 version, vocabulary, tensors in
//! name order with little-endian f32 payloads, trailing CRC-32.
//!
//! ```text
//! "ACGS" | version u32
//! n_tokens u32 | (len u32, utf8 bytes)*
//! n_tensors u32 | (name_len u32, name, rank u32, dims u64*, f32*)*
//! crc32 u32
//! ```
//! All integers are little-endian.

use std::io::Write;
use std::path::Path;

use acgs::corpus::Vocabulary;
use acgs::models::{DiscriminatorConfig, DiscriminatorParams, GeneratorConfig, GeneratorParams};
use acgs::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"ACGS";
pub const VERSION: u32 = 1;
pub const GENERATOR_META: &str = "meta.generator";
pub const DISCRIMINATOR_META: &str = "meta.discriminator";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint corrupted: CRC {found:08x} does not match {expected:08x}")]
    Corrupt { expected: u32, found: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint holds no {0}")]
    WrongKind(&'static str),
    #[error(transparent)]
    Model(#[from] acgs::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes tokens and tensors; tensor values are narrowed to f32.
pub fn encode(tokens: &[String], params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, tokens.len())?;
    for t in tokens {
        put_str(&mut out, t)?;
    }
    put_u32(&mut out, params.len())?;
    for (name, tensor) in params.iter() {
        put_str(&mut out, name)?;
        put_u32(&mut out, tensor.rank())?;
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| CheckpointError::Format(format!("invalid UTF-8: {e}")))
    }
}

/// Parses and validates a checkpoint image.
pub fn decode(bytes: &[u8]) -> Result<(Vec<String>, ParamSet)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Format("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let expected = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let found = crc32fast::hash(body);
    if expected != found {
        return Err(CheckpointError::Corrupt { expected, found });
    }

    let mut r = Reader { bytes: body, pos: 8 };
    let n_tokens = r.u32()? as usize;
    let tokens = (0..n_tokens).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let n_tensors = r.u32()? as usize;
    let mut params = ParamSet::new();
    let mut previous: Option<String> = None;
    for _ in 0..n_tensors {
        let name = r.string()?;
        if previous.as_ref().is_some_and(|p| *p >= name) {
            return Err(CheckpointError::Format(format!("tensor `{name}` out of order")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(4).is_some_and(|b| b <= body.len()))
            .ok_or_else(|| CheckpointError::Format(format!("tensor `{name}` has implausible dims {dims:?}")))?;
        let payload = r.take(count * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.insert(name.clone(), Tensor::new(dims, data)?);
        previous = Some(name);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes before CRC",
            body.len() - r.pos
        )));
    }
    Ok((tokens, params))
}

/// Writes `bytes` to a sibling temp file then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn save_checkpoint(path: &Path, vocab: &Vocabulary, params: &ParamSet) -> Result<()> {
    write_atomic(path, &encode(vocab.tokens(), params)?)
}

pub fn load_raw(path: &Path) -> Result<(Vec<String>, ParamSet)> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(Vocabulary, ParamSet)> {
    let (tokens, params) = load_raw(path)?;
    Ok((Vocabulary::from_tokens(tokens)?, params))
}

fn with_meta(params: &ParamSet, key: &str, meta: Vec<f64>) -> ParamSet {
    let mut all = params.clone();
    let n = meta.len();
    all.insert(key, Tensor::new(vec![n], meta).expect("non-empty meta"));
    all
}

fn split_meta(params: ParamSet, key: &'static str) -> Result<(Vec<f64>, ParamSet)> {
    let mut meta = None;
    let mut rest = ParamSet::new();
    for (name, tensor) in params {
        if name == key {
            meta = Some(tensor.into_data());
        } else {
            rest.insert(name, tensor);
        }
    }
    Ok((meta.ok_or(CheckpointError::WrongKind(key))?, rest))
}

pub fn save_generator(path: &Path, vocab: &Vocabulary, gen: &GeneratorParams) -> Result<()> {
    save_checkpoint(path, vocab, &with_meta(&gen.params, GENERATOR_META, gen.config.to_meta()))
}

pub fn load_generator(path: &Path) -> Result<(Vocabulary, GeneratorParams)> {
    let (vocab, params) = load_checkpoint(path)?;
    let (meta, params) = split_meta(params, GENERATOR_META)?;
    let gen = GeneratorParams::from_parts(GeneratorConfig::from_meta(&meta)?, params)?;
    Ok((vocab, gen))
}

pub fn save_discriminator(path: &Path, vocab: &Vocabulary, disc: &DiscriminatorParams) -> Result<()> {
    save_checkpoint(path, vocab, &with_meta(&disc.params, DISCRIMINATOR_META, disc.config.to_meta()))
}

pub fn load_discriminator(path: &Path) -> Result<(Vocabulary, DiscriminatorParams)> {
    let (vocab, params) = load_checkpoint(path)?;
    let (meta, params) = split_meta(params, DISCRIMINATOR_META)?;
    let disc = DiscriminatorParams::from_parts(DiscriminatorConfig::from_meta(&meta)?, params)?;
    Ok((vocab, disc))
}
