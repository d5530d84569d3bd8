//! Greedy calibrated re-ranking against an exhaustive search, scored by an
//! implementation written independently of the library.

use newsloop::corpus::Stance;
use newsloop::intervention::{calibrated_rerank, CalibrationParams, Candidate, StanceDistribution};
use newsloop::rng::{stream, Stream};
use rand::Rng;

const K: usize = 5;
const N: usize = 10;

struct Instance {
    candidates: Vec<Candidate>,
    target: [f64; 5],
}

fn instance(seed: u64) -> Instance {
    let mut rng = stream(seed, Stream::Training(7));
    let candidates = (0..N)
        .map(|i| Candidate {
            id: i as u32,
            stance: Stance::new(rng.random_range(-2..=2)).unwrap(),
            relevance: rng.random_range(-1.0..1.0),
        })
        .collect();
    let raw: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let total: f64 = raw.iter().sum();
    Instance {
        candidates,
        target: raw.map(|x| x / total),
    }
}

/// (1-λ)·Σ normalized relevance − λ·KL(p ‖ (1-α)q + αp) for the chosen indices.
fn objective(inst: &Instance, chosen: &[usize], lambda: f64, alpha: f64) -> f64 {
    let rels: Vec<f64> = inst.candidates.iter().map(|c| c.relevance).collect();
    let lo = rels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm = |r: f64| if hi > lo { (r - lo) / (hi - lo) } else { 0.5 };
    let rel: f64 = chosen.iter().map(|&i| norm(rels[i])).sum();

    let mut q = [0.0; 5];
    for &i in chosen {
        q[(inst.candidates[i].stance.value() + 2) as usize] += 1.0 / chosen.len() as f64;
    }
    let mut kl = 0.0;
    for (&p, &qs) in inst.target.iter().zip(&q) {
        if p > 0.0 {
            let mixed = (1.0 - alpha) * qs + alpha * p;
            kl += p * (p / mixed).ln();
        }
    }
    (1.0 - lambda) * rel - lambda * kl
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

fn indices(inst: &Instance, ids: &[u32]) -> Vec<usize> {
    ids.iter()
        .map(|id| inst.candidates.iter().position(|c| c.id == *id).unwrap())
        .collect()
}

fn top_by_relevance(inst: &Instance) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..N).collect();
    idx.sort_by(|&a, &b| {
        inst.candidates[b]
            .relevance
            .total_cmp(&inst.candidates[a].relevance)
            .then(a.cmp(&b))
    });
    idx.truncate(K);
    idx
}

#[test]
fn there_are_252_five_subsets_of_ten() {
    assert_eq!(subsets(N, K).len(), 252);
}

#[test]
fn greedy_is_within_five_percent_of_exhaustive_optimum() {
    let params = CalibrationParams::default();
    let all = subsets(N, K);
    let mut worst_ratio = f64::INFINITY;
    let mut negative = 0;
    for seed in 0..100 {
        let inst = instance(seed);
        let target = StanceDistribution::new(inst.target).unwrap();
        let ids = calibrated_rerank(&inst.candidates, &target, &params, K).unwrap();
        let greedy = objective(&inst, &indices(&inst, &ids), params.lambda, params.alpha);
        let best = all
            .iter()
            .map(|s| objective(&inst, s, params.lambda, params.alpha))
            .fold(f64::NEG_INFINITY, f64::max);
        let top = objective(&inst, &top_by_relevance(&inst), params.lambda, params.alpha);
        assert!(greedy <= best + 1e-12, "seed {seed}: greedy {greedy} beats optimum {best}");
        assert!(greedy >= top - 1e-12, "seed {seed}: greedy {greedy} below top-k {top}");
        assert!(
            greedy >= best - 0.05 * best.abs(),
            "seed {seed}: greedy {greedy} vs optimum {best}"
        );
        if best > 0.0 {
            worst_ratio = worst_ratio.min(greedy / best);
        } else {
            negative += 1;
        }
    }
    eprintln!("worst greedy/optimum ratio {worst_ratio}; {negative} instances with a non-positive optimum");
}

#[test]
fn lambda_zero_selects_relevance_top_k() {
    let params = CalibrationParams {
        lambda: 0.0,
        ..CalibrationParams::default()
    };
    for seed in 0..100 {
        let inst = instance(seed);
        let target = StanceDistribution::new(inst.target).unwrap();
        let mut got = indices(&inst, &calibrated_rerank(&inst.candidates, &target, &params, K).unwrap());
        let mut want = top_by_relevance(&inst);
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn output_is_ordered_by_raw_relevance() {
    let params = CalibrationParams::default();
    for seed in 0..20 {
        let inst = instance(seed);
        let target = StanceDistribution::new(inst.target).unwrap();
        let ids = calibrated_rerank(&inst.candidates, &target, &params, K).unwrap();
        let rel: Vec<f64> = indices(&inst, &ids).iter().map(|&i| inst.candidates[i].relevance).collect();
        assert!(rel.windows(2).all(|w| w[0] >= w[1]), "seed {seed}: {rel:?}");
    }
}
