//! Test-side reference implementations, written independently of the crate.
#![allow(dead_code)]

use std::collections::BTreeMap;

use logstamp::cluster::DbscanConfig;
use logstamp::encoder::{mask_line, EncoderConfig, EncoderModel, Vocab};
use logstamp::linalg::Mat;
use logstamp::synth;
use logstamp::tagger::{
    example_accuracy, prepare_examples, train_on_examples, Architecture, TaggerConfig, TaggerModel, TaggingExample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_STEP: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-3;

/// Worst finite-difference disagreement over every entry of every tensor.
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub entries: usize,
}

/// Central differences over each entry reached through `params`, compared
/// with `analytic` (same tensor order). `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<M: Clone>(
    model: &M,
    analytic: &[(String, Mat)],
    params: impl Fn(&mut M) -> Vec<&mut Mat>,
    loss: impl Fn(&M) -> f64,
) -> GradReport {
    let mut work = model.clone();
    let mut report = GradReport { max_rel_error: 0.0, worst: String::new(), entries: 0 };
    let n_tensors = params(&mut work).len();
    assert_eq!(n_tensors, analytic.len(), "tensor count mismatch");
    for t in 0..n_tensors {
        let len = params(&mut work)[t].data.len();
        assert_eq!(len, analytic[t].1.data.len(), "shape mismatch for {}", analytic[t].0);
        for k in 0..len {
            let orig = params(&mut work)[t].data[k];
            params(&mut work)[t].data[k] = orig + GRAD_STEP;
            let up = loss(&work);
            params(&mut work)[t].data[k] = orig - GRAD_STEP;
            let down = loss(&work);
            params(&mut work)[t].data[k] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic[t].1.data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.entries += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{k}] analytic {a:e} numeric {numeric:e}", analytic[t].0);
            }
        }
    }
    report
}

/// Every set partition of `0..n` as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..=max + 1 {
            prefix.push(b);
            grow(prefix, n, max.max(b), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        let mut prefix = vec![0];
        grow(&mut prefix, n, 0, &mut out);
    }
    out
}

/// `(tp, tn, fp, fn)` by looking at every unordered pair.
pub fn brute_force_pairs(pred: &[usize], truth: &[usize]) -> (u64, u64, u64, u64) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    (tp, tn, fp, fn_)
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Density clustering by connected components of the core graph.
///
/// Clusters are numbered by their smallest core index. A non-core point
/// joins the lowest-numbered cluster among the cores within `eps` of it,
/// otherwise it is noise (`None`).
pub fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| 1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let near: Vec<Vec<bool>> =
        (0..n).map(|i| (0..n).map(|j| dist(&points[i], &points[j]) <= eps).collect()).collect();
    let core: Vec<bool> = (0..n).map(|i| near[i].iter().filter(|&&b| b).count() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near[i][j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut number: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cluster_of_core = vec![None; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let next = number.len();
            let id = *number.entry(root).or_insert(next);
            cluster_of_core[i] = Some(id);
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                cluster_of_core[i]
            } else {
                (0..n).filter(|&j| core[j] && near[i][j]).filter_map(|j| cluster_of_core[j]).min()
            }
        })
        .collect()
}

/// Relabels clusters by first appearance so equal partitions compare equal.
pub fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `n` unit vectors around `centres` random directions in `dim`
/// dimensions, with per-coordinate jitter `spread`.
pub fn random_blobs(rng: &mut impl Rng, n: usize, dim: usize, centres: usize, spread: f64) -> Vec<Vec<f64>> {
    let c: Vec<Vec<f64>> =
        (0..centres).map(|_| unit((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
    (0..n)
        .map(|_| {
            let base = &c[rng.gen_range(0..centres)];
            unit(base.iter().map(|x| x + rng.gen_range(-spread..spread)).collect())
        })
        .collect()
}

/// Instance `k` of the randomized clustering comparison: up to 100 points
/// around a few centres, with eps and min_pts drawn per instance.
pub fn random_instance(k: u64) -> (Vec<Vec<f64>>, DbscanConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    let n = rng.gen_range(1..=100);
    let dim = rng.gen_range(2..=6);
    let centres = rng.gen_range(1..=5);
    let spread = rng.gen_range(0.05..0.6);
    let points = random_blobs(&mut rng, n, dim, centres, spread);
    let cfg = DbscanConfig { eps: rng.gen_range(0.01..0.3), min_pts: rng.gen_range(1..=6) };
    (points, cfg)
}

/// Context-free word vectors over the long-range alphabet, so any
/// dependency on earlier tokens must be carried by the tagger itself.
pub fn context_free_encoder() -> EncoderModel {
    let vocab = Vocab::from_tokens(["ka", "ko", "ku", "ke"].iter().map(|s| s.to_string()).collect());
    let cfg = EncoderConfig { embed_dim: 8, hidden_dim: 8, ..EncoderConfig::default() };
    let mut enc = EncoderModel::initialize(vocab, &cfg).unwrap();
    enc.zero_recurrence();
    enc
}

/// Held-out token accuracy of the bidirectional recurrent and the
/// convolutional tagger when labels depend on the token three steps back.
pub fn long_range_accuracies() -> (f64, f64) {
    let encoder = context_free_encoder();
    let train = prepare_examples(&synth::long_range_sentences(300, 10, 3, 1), &encoder).unwrap();
    let test = prepare_examples(&synth::long_range_sentences(200, 10, 3, 2), &encoder).unwrap();
    let acc = |arch| {
        let cfg = TaggerConfig { architecture: arch, hidden_dim: 16, epochs: 15, ..TaggerConfig::default() };
        example_accuracy(&train_on_examples(&train, encoder.embed_dim, &cfg).unwrap(), &test)
    };
    (acc(Architecture::RecurrentBidir), acc(Architecture::Convolutional))
}

/// Masked-token loss of a 4-dim encoder on two three-token lines.
pub fn encoder_gradient_report() -> GradReport {
    let vocab = Vocab::from_tokens(vec!["a".into(), "b".into(), "c".into()]);
    let cfg = EncoderConfig { embed_dim: 4, hidden_dim: 4, seed: 3, ..EncoderConfig::default() };
    let model = EncoderModel::initialize(vocab, &cfg).unwrap();
    let v = &model.vocab;
    let lines = vec![
        mask_line(&v.encode(&["a", "b", "c"]), &[1], v.mask_id()),
        mask_line(&v.encode(&["c", "a", "b"]), &[0, 2], v.mask_id()),
    ];
    let (_, grads) = model.masked_loss_and_grad(&lines);
    let analytic: Vec<(String, Mat)> = grads.tensors().iter().map(|(n, m)| (n.to_string(), (*m).clone())).collect();
    gradient_check(
        &model,
        &analytic,
        |m: &mut EncoderModel| m.params.tensors_mut().into_iter().collect(),
        |m| m.masked_loss(&lines),
    )
}

fn random_example(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> TaggingExample {
    TaggingExample {
        inputs: (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        targets: (0..len).map(|_| rng.gen_range(0..2)).collect(),
    }
}

/// Token cross-entropy of a tagger with random weights on two short
/// random sequences.
pub fn tagger_gradient_report(arch: Architecture) -> GradReport {
    let cfg = TaggerConfig { architecture: arch, hidden_dim: 4, seed: 5, ..TaggerConfig::default() };
    let mut model = TaggerModel::initialize(3, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m in model.params.tensors_mut() {
        m.data.iter_mut().for_each(|x| *x = rng.gen_range(-0.8..0.8));
    }
    let examples = vec![random_example(&mut rng, 3, 3), random_example(&mut rng, 4, 3)];
    let (_, grads) = model.loss_and_grad(&examples);
    let analytic: Vec<(String, Mat)> = grads.tensors().into_iter().map(|(n, m)| (n, m.clone())).collect();
    gradient_check(&model, &analytic, |m: &mut TaggerModel| m.params.tensors_mut(), |m| m.loss(&examples))
}
