//! Analytic ranker gradients against central finite differences of the loss.

use personachat::rankers::{example_loss_and_grad, EmbeddingMatrix, EncodedExample, RowGrads};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 12;
const DIM: usize = 5;
const EPS: f64 = 1e-4;

struct Instance {
    w: EmbeddingMatrix,
    examples: Vec<(EncodedExample, Vec<Vec<usize>>)>,
}

fn instance(seed: u64, profile: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = EmbeddingMatrix::random(VOCAB, DIM, 0.5, &mut rng);
    let ids = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(0..VOCAB)).collect::<Vec<_>>();
    let examples = (0..3)
        .map(|_| {
            let ex = EncodedExample {
                query: ids(&mut rng, 4),
                profile: if profile { (0..3).map(|_| ids(&mut rng, 3)).collect() } else { vec![] },
                positive: ids(&mut rng, 3),
            };
            let negs = (0..3).map(|_| ids(&mut rng, 3)).collect();
            (ex, negs)
        })
        .collect();
    Instance { w, examples }
}

fn total_loss(w: &EmbeddingMatrix, inst: &Instance, margin: f64, hops: usize) -> f64 {
    inst.examples
        .iter()
        .map(|(ex, negs)| example_loss_and_grad(w, w, ex, negs, margin, hops, None))
        .sum()
}

/// Max relative error between analytic and central-difference gradients
/// over every entry of the shared table.
fn max_rel_error(inst: &Instance, margin: f64, hops: usize) -> f64 {
    let mut analytic = vec![0.0; VOCAB * DIM];
    for (ex, negs) in &inst.examples {
        let mut g = RowGrads::default();
        example_loss_and_grad(&inst.w, &inst.w, ex, negs, margin, hops, Some(&mut g));
        for (row, gr) in g.combined() {
            for (j, v) in gr.iter().enumerate() {
                analytic[row * DIM + j] += v;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for k in 0..VOCAB * DIM {
        let mut plus = inst.w.clone();
        plus.as_mut_slice()[k] += EPS;
        let mut minus = inst.w.clone();
        minus.as_mut_slice()[k] -= EPS;
        let fd = (total_loss(&plus, inst, margin, hops) - total_loss(&minus, inst, margin, hops)) / (2.0 * EPS);
        let denom = analytic[k].abs().max(fd.abs()).max(1e-8);
        worst = worst.max((analytic[k] - fd).abs() / denom);
    }
    worst
}

#[test]
fn plain_ranker_gradient() {
    for seed in 0..10 {
        let inst = instance(seed, false);
        assert!(total_loss(&inst.w, &inst, 1.5, 1) > 0.0);
        let err = max_rel_error(&inst, 1.5, 1);
        assert!(err < 1e-4, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn profile_attention_gradient() {
    for hops in [1, 2] {
        for seed in 0..10 {
            let inst = instance(100 + seed, true);
            let err = max_rel_error(&inst, 1.5, hops);
            assert!(err < 1e-4, "hops {hops} seed {seed}: rel err {err:e}");
        }
    }
}
