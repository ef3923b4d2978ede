//! Binary model files.
//!
//! Ranker layout (little endian): magic `PRNK`, u32 version, u32 d, u32 D,
//! u32 tokenizer version, u64 vocabulary fingerprint, u32 flags, u32 hops,
//! then the D×d query table as f64 rows, then the candidate table when
//! flag bit 1 is set.
//!
//! Key-value store layout: magic `PKVS`, u32 version, u32 d, u64 count,
//! u64 top_M (`u64::MAX` = unbounded), u8 residual, then per pair the key
//! and value as f64 and the reply text as u32 length + UTF-8 bytes.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::textrep::{Vocabulary, TOKENIZER_VERSION};

use super::embedding::{EmbeddingMatrix, EmbeddingRanker};
use super::kv::{KvPair, KvStore};
use super::RankerError;

pub const RANKER_MAGIC: &[u8; 4] = b"PRNK";
const KV_MAGIC: &[u8; 4] = b"PKVS";
const VERSION: u32 = 1;

const FLAG_PROFILE_ATTENTION: u32 = 1;
const FLAG_SEPARATE_CANDIDATES: u32 = 1 << 1;

fn write_floats<W: Write>(out: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for &x in xs {
        out.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_floats<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>, RankerError> {
    let mut v = vec![0.0; n];
    input.read_f64_into::<LE>(&mut v)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RankerError::Format("non-finite weight".into()));
    }
    Ok(v)
}

pub fn write_ranker<W: Write>(model: &EmbeddingRanker, mut out: W) -> Result<(), RankerError> {
    let w = &model.query_emb;
    let mut flags = 0;
    if model.profile_attention {
        flags |= FLAG_PROFILE_ATTENTION;
    }
    if model.cand_emb.is_some() {
        flags |= FLAG_SEPARATE_CANDIDATES;
    }
    out.write_all(RANKER_MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u32::<LE>(w.dim() as u32)?;
    out.write_u32::<LE>(w.rows() as u32)?;
    out.write_u32::<LE>(TOKENIZER_VERSION)?;
    out.write_u64::<LE>(model.vocab.fingerprint())?;
    out.write_u32::<LE>(flags)?;
    out.write_u32::<LE>(model.hops as u32)?;
    write_floats(&mut out, w.as_slice())?;
    if let Some(c) = &model.cand_emb {
        write_floats(&mut out, c.as_slice())?;
    }
    Ok(())
}

/// Reads a ranker and binds it to `vocab`, which must be the vocabulary it
/// was trained with.
pub fn read_ranker<R: Read>(mut input: R, vocab: Vocabulary) -> Result<EmbeddingRanker, RankerError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != RANKER_MAGIC {
        return Err(RankerError::Format("bad magic, not a ranker file".into()));
    }
    let version = input.read_u32::<LE>()?;
    if version != VERSION {
        return Err(RankerError::Format(format!("unsupported version {version}")));
    }
    let dim = input.read_u32::<LE>()? as usize;
    let rows = input.read_u32::<LE>()? as usize;
    let tok = input.read_u32::<LE>()?;
    if tok != TOKENIZER_VERSION {
        return Err(RankerError::Format(format!("tokenizer v{tok} does not match v{TOKENIZER_VERSION}")));
    }
    let fp = input.read_u64::<LE>()?;
    if fp != vocab.fingerprint() || rows != vocab.len() {
        return Err(RankerError::Format("model was trained with a different vocabulary".into()));
    }
    let flags = input.read_u32::<LE>()?;
    let hops = input.read_u32::<LE>()? as usize;
    let query_emb = EmbeddingMatrix::from_vec(rows, dim, read_floats(&mut input, rows * dim)?);
    let cand_emb = if flags & FLAG_SEPARATE_CANDIDATES != 0 {
        Some(EmbeddingMatrix::from_vec(rows, dim, read_floats(&mut input, rows * dim)?))
    } else {
        None
    };
    Ok(EmbeddingRanker {
        vocab,
        query_emb,
        cand_emb,
        profile_attention: flags & FLAG_PROFILE_ATTENTION != 0,
        hops,
    })
}

pub fn write_kv_store<W: Write>(store: &KvStore, mut out: W) -> Result<(), RankerError> {
    out.write_all(KV_MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u32::<LE>(store.dim() as u32)?;
    out.write_u64::<LE>(store.len() as u64)?;
    out.write_u64::<LE>(store.top_m.map_or(u64::MAX, |m| m as u64))?;
    out.write_u8(u8::from(store.residual))?;
    for p in &store.pairs {
        write_floats(&mut out, &p.key)?;
        write_floats(&mut out, &p.value)?;
        out.write_u32::<LE>(p.text.len() as u32)?;
        out.write_all(p.text.as_bytes())?;
    }
    Ok(())
}

pub fn read_kv_store<R: Read>(mut input: R) -> Result<KvStore, RankerError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != KV_MAGIC {
        return Err(RankerError::Format("bad magic, not a key-value store".into()));
    }
    let version = input.read_u32::<LE>()?;
    if version != VERSION {
        return Err(RankerError::Format(format!("unsupported version {version}")));
    }
    let dim = input.read_u32::<LE>()? as usize;
    let count = input.read_u64::<LE>()? as usize;
    let top_m = match input.read_u64::<LE>()? {
        u64::MAX => None,
        m => Some(m as usize),
    };
    let residual = input.read_u8()? != 0;
    let mut pairs = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let key = read_floats(&mut input, dim)?;
        let value = read_floats(&mut input, dim)?;
        let len = input.read_u32::<LE>()? as usize;
        let mut bytes = vec![0u8; len];
        input.read_exact(&mut bytes)?;
        let text = String::from_utf8(bytes).map_err(|_| RankerError::Format("reply text is not UTF-8".into()))?;
        pairs.push(KvPair { key, value, text });
    }
    Ok(KvStore { pairs, top_m, residual })
}
