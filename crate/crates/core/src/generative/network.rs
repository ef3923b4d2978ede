//! Forward and backward passes of the encoder–decoder, with optional
//! profile-memory attention on the decoder side.

use crate::numeric::{dot, matvec, matvec_t_acc, outer_acc, softmax};
use crate::textrep::{ZipfWeights, EOS};

use super::lstm::{cell_backward, cell_step, CellCache};
use super::{GenExample, GenMode, GenParams};

/// `F`: one row per profile sentence, each the inverse-frequency weighted
/// sum of its token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMemory {
    pub rows: Vec<Vec<f64>>,
    tokens: Vec<Vec<(usize, f64)>>,
}

impl ProfileMemory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn encode_profile(sentences: &[Vec<usize>], zipf: &ZipfWeights, params: &GenParams) -> ProfileMemory {
    let e = params.emb_dim;
    let mut rows = Vec::with_capacity(sentences.len());
    let mut tokens = Vec::with_capacity(sentences.len());
    for s in sentences {
        if s.is_empty() {
            log::warn!("empty profile sentence encodes to a zero memory row");
        }
        let mut row = vec![0.0; e];
        let weighted: Vec<(usize, f64)> = s.iter().map(|&t| (t, zipf.alpha(t))).collect();
        for &(t, a) in &weighted {
            for (r, x) in row.iter_mut().zip(params.emb_row(t)) {
                *r += a * x;
            }
        }
        rows.push(row);
        tokens.push(weighted);
    }
    ProfileMemory { rows, tokens }
}

/// Output distribution `softmax(w_j · h)` over the vocabulary.
pub fn decode_word_dist(params: &GenParams, h: &[f64]) -> Vec<f64> {
    softmax(&logits(params, h))
}

fn logits(params: &GenParams, h: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; params.vocab_size];
    matvec(&params.out_w, params.vocab_size, params.hidden, h, &mut z);
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStep {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub x_hat: Vec<f64>,
}

/// `a = softmax(F W_a h)`, `c = aᵀF` and `x̂ = tanh(W_c [c_prev; x])`.
pub fn attend_step(
    memory: &ProfileMemory,
    h: &[f64],
    x: &[f64],
    c_prev: &[f64],
    params: &GenParams,
) -> AttentionStep {
    let (_, a, c) = attend(params, memory, h);
    let (_, x_hat) = mix_input(params, c_prev, x);
    AttentionStep { a, c, x_hat }
}

/// Returns `(W_a h, a, c)`.
fn attend(p: &GenParams, m: &ProfileMemory, h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let e = p.emb_dim;
    let mut u = vec![0.0; e];
    matvec(&p.att_wa, e, p.hidden, h, &mut u);
    let scores: Vec<f64> = m.rows.iter().map(|r| dot(r, &u)).collect();
    let a = softmax(&scores);
    let mut c = vec![0.0; e];
    for (ai, r) in a.iter().zip(&m.rows) {
        for (ck, rk) in c.iter_mut().zip(r) {
            *ck += ai * rk;
        }
    }
    (u, a, c)
}

/// Returns `([c_prev; x], x̂)`.
fn mix_input(p: &GenParams, c_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let e = p.emb_dim;
    let mut v = Vec::with_capacity(2 * e);
    v.extend_from_slice(c_prev);
    v.extend_from_slice(x);
    let mut z = vec![0.0; e];
    matvec(&p.att_wc, e, 2 * e, &v, &mut z);
    z.iter_mut().for_each(|t| *t = t.tanh());
    (v, z)
}

struct DecStep {
    input: usize,
    mix_in: Vec<f64>,
    x_hat: Vec<f64>,
    cell: CellCache,
    /// `(W_a h, a, c)` when attending.
    att: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    target: Option<usize>,
    probs: Vec<f64>,
    loss: TokenLoss,
    log_prob: f64,
}

/// One target token's loss split as `-ln p = ln(sum_exp) + gap`, where
/// `sum_exp = Σ_j exp(z_j - z_max)` and `gap = z_max - z_target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenLoss {
    pub sum_exp: f64,
    pub gap: f64,
}

impl TokenLoss {
    pub fn nll(self) -> f64 {
        self.sum_exp.ln() + self.gap
    }

    fn from_logits(z: &[f64], target: usize) -> Self {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        TokenLoss {
            sum_exp: z.iter().map(|v| (v - max).exp()).sum(),
            gap: max - z[target],
        }
    }
}

struct Trace {
    enc: Vec<(usize, CellCache)>,
    dec: Vec<DecStep>,
    memory: Option<ProfileMemory>,
}

fn dec_step(
    p: &GenParams,
    memory: Option<&ProfileMemory>,
    input: usize,
    h: &[f64],
    c: &[f64],
    ctx: &[f64],
    target: Option<usize>,
) -> DecStep {
    let x = p.emb_row(input);
    let (mix_in, x_hat) = match memory {
        Some(_) => mix_input(p, ctx, x),
        None => (Vec::new(), x.to_vec()),
    };
    let cell = cell_step(p.dec_cell(), &x_hat, h, c);
    let att = memory.map(|m| attend(p, m, &cell.h));
    let (probs, loss) = match target {
        Some(t) => {
            let z = logits(p, &cell.h);
            (softmax(&z), TokenLoss::from_logits(&z, t))
        }
        None => (Vec::new(), TokenLoss { sum_exp: 1.0, gap: 0.0 }),
    };
    let log_prob = -loss.nll();
    DecStep {
        input,
        mix_in,
        x_hat,
        cell,
        att,
        target,
        probs,
        loss,
        log_prob,
    }
}

fn memory_for(p: &GenParams, mode: GenMode, zipf: &ZipfWeights, ex: &GenExample) -> Option<ProfileMemory> {
    // Without profile sentences the memory model is the plain seq2seq model.
    (mode == GenMode::ProfileMemory && !ex.memories.is_empty()).then(|| encode_profile(&ex.memories, zipf, p))
}

fn encode(p: &GenParams, source: &[usize]) -> (Vec<(usize, CellCache)>, Vec<f64>, Vec<f64>) {
    let h = p.hidden;
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    let mut caches = Vec::with_capacity(source.len());
    for &t in source {
        let cache = cell_step(p.enc_cell(), p.emb_row(t), &hs, &cs);
        hs = cache.h.clone();
        cs = cache.c.clone();
        caches.push((t, cache));
    }
    (caches, hs, cs)
}

/// Decoder inputs and targets under teacher forcing. The language model
/// reads the source as an unscored prefix.
fn decoder_plan(mode: GenMode, ex: &GenExample) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    if mode == GenMode::Lm {
        inputs.extend_from_slice(&ex.source);
        targets.extend(std::iter::repeat_n(None, ex.source.len()));
    }
    inputs.push(EOS);
    inputs.extend_from_slice(&ex.target);
    targets.extend(ex.target.iter().map(|&t| Some(t)));
    targets.push(Some(EOS));
    (inputs, targets)
}

fn forward(p: &GenParams, mode: GenMode, zipf: &ZipfWeights, ex: &GenExample) -> Trace {
    let memory = memory_for(p, mode, zipf, ex);
    let (enc, mut h, mut c) = if mode == GenMode::Lm {
        (Vec::new(), vec![0.0; p.hidden], vec![0.0; p.hidden])
    } else {
        encode(p, &ex.source)
    };
    let mut ctx = vec![0.0; p.emb_dim];
    let (inputs, targets) = decoder_plan(mode, ex);
    let mut dec = Vec::with_capacity(inputs.len());
    for (&input, &target) in inputs.iter().zip(&targets) {
        let step = dec_step(p, memory.as_ref(), input, &h, &c, &ctx, target);
        h = step.cell.h.clone();
        c = step.cell.c.clone();
        if let Some((_, _, cc)) = &step.att {
            ctx = cc.clone();
        }
        dec.push(step);
    }
    Trace { enc, dec, memory }
}

/// Log-probabilities of each target token followed by the end marker.
pub(super) fn teacher_forced_log_probs(p: &GenParams, mode: GenMode, zipf: &ZipfWeights, ex: &GenExample) -> Vec<f64> {
    forward(p, mode, zipf, ex)
        .dec
        .iter()
        .filter(|s| s.target.is_some())
        .map(|s| s.log_prob)
        .collect()
}

/// Per-token losses of the target followed by the end marker.
pub(super) fn teacher_forced_losses(p: &GenParams, mode: GenMode, zipf: &ZipfWeights, ex: &GenExample) -> Vec<TokenLoss> {
    forward(p, mode, zipf, ex)
        .dec
        .iter()
        .filter(|s| s.target.is_some())
        .map(|s| s.loss)
        .collect()
}

/// Summed negative log-likelihood of the target and end marker, in nats.
pub fn example_loss(p: &GenParams, mode: GenMode, zipf: &ZipfWeights, ex: &GenExample) -> f64 {
    -teacher_forced_log_probs(p, mode, zipf, ex).iter().sum::<f64>()
}

/// Loss as in [`example_loss`]; gradients are added into `grad`.
pub fn example_loss_and_grad(
    p: &GenParams,
    mode: GenMode,
    zipf: &ZipfWeights,
    ex: &GenExample,
    grad: &mut GenParams,
) -> f64 {
    let trace = forward(p, mode, zipf, ex);
    let (k, e, hd) = (p.vocab_size, p.emb_dim, p.hidden);
    let mut loss = 0.0;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dctx_next = vec![0.0; e];
    let mut d_rows: Vec<Vec<f64>> = trace
        .memory
        .as_ref()
        .map_or_else(Vec::new, |m| vec![vec![0.0; e]; m.len()]);

    for step in trace.dec.iter().rev() {
        let mut dh = dh_next.clone();
        if let Some(t) = step.target {
            loss -= step.log_prob;
            let mut dz = step.probs.clone();
            dz[t] -= 1.0;
            outer_acc(&mut grad.out_w, k, hd, &dz, &step.cell.h);
            matvec_t_acc(&p.out_w, k, hd, &dz, &mut dh);
        }
        if let (Some((u, a, _)), Some(m)) = (&step.att, &trace.memory) {
            let da: Vec<f64> = m.rows.iter().map(|r| dot(&dctx_next, r)).collect();
            let mean = dot(a, &da);
            let mut du = vec![0.0; e];
            for i in 0..m.len() {
                let ds = a[i] * (da[i] - mean);
                for q in 0..e {
                    d_rows[i][q] += a[i] * dctx_next[q] + ds * u[q];
                    du[q] += ds * m.rows[i][q];
                }
            }
            outer_acc(&mut grad.att_wa, e, hd, &du, &step.cell.h);
            matvec_t_acc(&p.att_wa, e, hd, &du, &mut dh);
        }
        let (dx_hat, dh_prev, dc_prev) = cell_backward(
            p.dec_cell(),
            &step.cell,
            &dh,
            &dc_next,
            &mut grad.dec_w,
            &mut grad.dec_b,
        );
        let dx = if step.att.is_some() {
            let dz: Vec<f64> = dx_hat.iter().zip(&step.x_hat).map(|(d, x)| d * (1.0 - x * x)).collect();
            outer_acc(&mut grad.att_wc, e, 2 * e, &dz, &step.mix_in);
            let mut dmix = vec![0.0; 2 * e];
            matvec_t_acc(&p.att_wc, e, 2 * e, &dz, &mut dmix);
            let dx = dmix.split_off(e);
            dctx_next = dmix;
            dx
        } else {
            dx_hat
        };
        add_row(&mut grad.emb, e, step.input, 1.0, &dx);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    for (t, cache) in trace.enc.iter().rev() {
        let (dx, dh_prev, dc_prev) = cell_backward(
            p.enc_cell(),
            cache,
            &dh_next,
            &dc_next,
            &mut grad.enc_w,
            &mut grad.enc_b,
        );
        add_row(&mut grad.emb, e, *t, 1.0, &dx);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }

    if let Some(m) = &trace.memory {
        for (toks, dr) in m.tokens.iter().zip(&d_rows) {
            for &(t, alpha) in toks {
                add_row(&mut grad.emb, e, t, alpha, dr);
            }
        }
    }
    loss
}

fn add_row(table: &mut [f64], width: usize, row: usize, scale: f64, v: &[f64]) {
    for (x, d) in table[row * width..(row + 1) * width].iter_mut().zip(v) {
        *x += scale * d;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(super) fn greedy(p: &GenParams, mode: GenMode, zipf: &ZipfWeights, ex: &GenExample, max_len: usize) -> Vec<usize> {
    if max_len == 0 {
        return Vec::new();
    }
    let memory = memory_for(p, mode, zipf, ex);
    let (mut h, mut c) = if mode == GenMode::Lm {
        (vec![0.0; p.hidden], vec![0.0; p.hidden])
    } else {
        let (_, h, c) = encode(p, &ex.source);
        (h, c)
    };
    let mut ctx = vec![0.0; p.emb_dim];
    let advance = |input: usize, h: &mut Vec<f64>, c: &mut Vec<f64>, ctx: &mut Vec<f64>| {
        let step = dec_step(p, memory.as_ref(), input, h, c, ctx, None);
        if let Some((_, _, cc)) = step.att {
            *ctx = cc;
        }
        *h = step.cell.h;
        *c = step.cell.c;
    };
    if mode == GenMode::Lm {
        for &t in &ex.source {
            advance(t, &mut h, &mut c, &mut ctx);
        }
    }
    let mut out = Vec::new();
    let mut input = EOS;
    while out.len() < max_len {
        advance(input, &mut h, &mut c, &mut ctx);
        let next = argmax(&logits(p, &h));
        if next == EOS {
            break;
        }
        out.push(next);
        input = next;
    }
    out
}
