//! Generative model file (little endian): magic `PGEN`, u32 version, u8 mode,
//! u32 K, u32 e, u32 h, u32 tokenizer version, u64 vocabulary fingerprint,
//! u32 max decode length, u32 max source tokens, u8 length-normalize flag,
//! then the parameter blocks as f64 in `BLOCK_NAMES` order.

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::textrep::{Vocabulary, ZipfWeights, TOKENIZER_VERSION, UNK};

use super::{GenError, GenMode, GenModel, GenParams};

pub const GEN_MAGIC: &[u8; 4] = b"PGEN";
const VERSION: u32 = 1;

pub fn write_gen_model<W: Write>(model: &GenModel, mut out: W) -> Result<(), GenError> {
    let p = &model.params;
    out.write_all(GEN_MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    out.write_u8(model.mode.code())?;
    out.write_u32::<LE>(p.vocab_size as u32)?;
    out.write_u32::<LE>(p.emb_dim as u32)?;
    out.write_u32::<LE>(p.hidden as u32)?;
    out.write_u32::<LE>(TOKENIZER_VERSION)?;
    out.write_u64::<LE>(model.vocab.fingerprint())?;
    out.write_u32::<LE>(model.max_decode_len as u32)?;
    out.write_u32::<LE>(model.max_source_tokens as u32)?;
    out.write_u8(u8::from(model.length_normalize))?;
    for block in p.blocks() {
        for &x in block {
            out.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_gen_model<R: Read>(mut input: R, vocab: Vocabulary) -> Result<GenModel, GenError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != GEN_MAGIC {
        return Err(GenError::Format("bad magic, not a generative model file".into()));
    }
    let version = input.read_u32::<LE>()?;
    if version != VERSION {
        return Err(GenError::Format(format!("unsupported version {version}")));
    }
    let mode = GenMode::from_code(input.read_u8()?).ok_or_else(|| GenError::Format("unknown mode".into()))?;
    let k = input.read_u32::<LE>()? as usize;
    let e = input.read_u32::<LE>()? as usize;
    let h = input.read_u32::<LE>()? as usize;
    let tok = input.read_u32::<LE>()?;
    if tok != TOKENIZER_VERSION {
        return Err(GenError::Format(format!("tokenizer v{tok} does not match v{TOKENIZER_VERSION}")));
    }
    if input.read_u64::<LE>()? != vocab.fingerprint() || k != vocab.len() {
        return Err(GenError::Format("model was trained with a different vocabulary".into()));
    }
    let max_decode_len = input.read_u32::<LE>()? as usize;
    let max_source_tokens = input.read_u32::<LE>()? as usize;
    let length_normalize = input.read_u8()? != 0;
    let mut params = GenParams::zeros(k, e, h);
    for block in params.blocks_mut() {
        input.read_f64_into::<LE>(block)?;
    }
    if !params.is_finite() {
        return Err(GenError::Format("non-finite weight".into()));
    }
    Ok(GenModel {
        zipf: ZipfWeights::from_vocab(&vocab),
        vocab,
        params,
        mode,
        max_decode_len,
        max_source_tokens,
        length_normalize,
    })
}

/// Overwrites embedding rows from a text file of `token x_1 … x_e` lines.
/// Tokens outside the vocabulary are skipped. Returns the number of rows set.
pub fn load_text_vectors<R: BufRead>(input: R, vocab: &Vocabulary, params: &mut GenParams) -> Result<usize, GenError> {
    let e = params.emb_dim;
    let mut loaded = 0;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|err| GenError::Format(format!("line {}: {err}", n + 1)))?;
        if values.len() != e {
            return Err(GenError::Format(format!(
                "line {}: expected {e} values, found {}",
                n + 1,
                values.len()
            )));
        }
        let id = vocab.get(token);
        if id == UNK && token != vocab.token(UNK) {
            continue;
        }
        params.emb[id * e..(id + 1) * e].copy_from_slice(&values);
        loaded += 1;
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::GenConfig;

    fn model() -> GenModel {
        let vocab = Vocabulary::build(["one two three"], 1).unwrap();
        let cfg = GenConfig {
            mode: GenMode::ProfileMemory,
            length_normalize: true,
            ..Default::default()
        };
        GenModel::new(vocab.clone(), GenParams::random(vocab.len(), 3, 4, 0.2, 5), &cfg)
    }

    #[test]
    fn round_trip() {
        let m = model();
        let mut buf = Vec::new();
        write_gen_model(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], GEN_MAGIC);
        let back = read_gen_model(&buf[..], m.vocab.clone()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.mode, GenMode::ProfileMemory);
        assert!(back.length_normalize);
    }

    #[test]
    fn rejects_truncated_and_foreign() {
        let m = model();
        let mut buf = Vec::new();
        write_gen_model(&m, &mut buf).unwrap();
        assert!(read_gen_model(&buf[..buf.len() - 8], m.vocab.clone()).is_err());
        let other = Vocabulary::build(["x"], 1).unwrap();
        assert!(matches!(read_gen_model(&buf[..], other), Err(GenError::Format(_))));
    }

    #[test]
    fn text_vectors_overwrite_known_rows() {
        let mut m = model();
        let text = "two 1 2 3\nunknownword 4 5 6\n\n";
        let n = load_text_vectors(text.as_bytes(), &m.vocab, &mut m.params).unwrap();
        assert_eq!(n, 1);
        assert_eq!(m.params.emb_row(m.vocab.get("two")), &[1.0, 2.0, 3.0]);
        assert!(load_text_vectors("two 1 2".as_bytes(), &m.vocab, &mut m.params).is_err());
    }
}
