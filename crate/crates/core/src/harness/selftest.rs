//! Quick oracle checks behind the `selftest` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::convolve;
use crate::deepsic::DeepSicNet;
use crate::fec::{rs_decode, rs_encode, Gf256, RsParams};
use crate::neural::{loss_and_grad, mlp_init, LabeledBatch, MlpSpec, Objective};
use crate::training::{meta_gradient, MetaMode};
use crate::viterbinet::{true_loglik_table, viterbi_detect, Trellis, ViterbiNet};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<Check> {
    vec![rs_round_trips(), gradients(), viterbi_brute_force(), scalar_meta()]
}

fn rs_round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for params in [RsParams::siso_default(), RsParams::mimo_default()] {
        for _ in 0..500 {
            let msg: Vec<Gf256> = (0..params.k()).map(|_| Gf256(rng.gen())).collect();
            let mut word = rs_encode(&msg, &params).expect("message length");
            let errors = rng.gen_range(0..=params.t());
            for pos in rand::seq::index::sample(&mut rng, params.n(), errors) {
                word[pos] = word[pos] + Gf256(rng.gen_range(1..=255));
            }
            match rs_decode(&word, &params) {
                Ok(d) if d.message == msg && d.corrected == errors => {}
                _ => failures += 1,
            }
        }
    }
    Check {
        name: "rs round trips",
        passed: failures == 0,
        detail: format!("{failures} failures of 1000"),
    }
}

fn max_rel_grad_error(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> f64 {
    let p = mlp_init(spec, rng);
    let rows = 8;
    let inputs: Vec<f64> = (0..rows * spec.input_dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let labels: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..spec.output_dim())).collect();
    let batch = LabeledBatch::new(spec.input_dim(), inputs, labels).expect("batch");
    let analytic = loss_and_grad(spec, &p, &batch).expect("shapes").grad;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = rng.gen_range(0..p.len());
        let mut plus = p.clone();
        plus[i] += h;
        let mut minus = p.clone();
        minus[i] -= h;
        let numeric = (loss_and_grad(spec, &plus, &batch).unwrap().loss - loss_and_grad(spec, &minus, &batch).unwrap().loss) / (2.0 * h);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((numeric - analytic[i]).abs() / denom);
    }
    worst
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = max_rel_grad_error(&ViterbiNet::spec_for(4), &mut rng);
    let b = max_rel_grad_error(&DeepSicNet::module_spec(4, 4), &mut rng);
    let worst = a.max(b);
    Check {
        name: "gradient check",
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    }
}

fn viterbi_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..30 {
        let l = rng.gen_range(1..=3);
        let b = rng.gen_range(1..=8);
        let taps: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..b).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = viterbi_detect(&true_loglik_table(&taps, 0.7, &y), &Trellis::new(l));
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for code in 0..1usize << b {
            let s: Vec<f64> = (0..b).map(|i| if code >> (b - 1 - i) & 1 == 0 { 1.0 } else { -1.0 }).collect();
            let metric: f64 = -convolve(&s, &taps).iter().zip(&y).map(|(m, v)| (v - m).powi(2)).sum::<f64>();
            if metric > best.0 {
                best = (metric, s);
            }
        }
        mismatches += (got != best.1) as usize;
    }
    Check {
        name: "viterbi vs exhaustive",
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches of 30"),
    }
}

struct Quad(f64);
impl Objective for Quad {
    fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        (0.5 * (p[0] - self.0).powi(2), vec![p[0] - self.0])
    }
}

fn scalar_meta() -> Check {
    let exact = meta_gradient(&[0.0], &Quad(1.0), &Quad(2.0), 0.1, MetaMode::ExactHvp, 1e-5)[0];
    let first = meta_gradient(&[0.0], &Quad(1.0), &Quad(2.0), 0.1, MetaMode::FirstOrder, 1e-5)[0];
    Check {
        name: "scalar meta-gradient",
        passed: (exact + 1.71).abs() < 1e-10 && (first + 1.9).abs() < 1e-10,
        detail: format!("exact {exact}, first-order {first}"),
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
