//! Runtime verification of the loss numerics: algebraic identities,
//! finite-difference gradient checks and truncation boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{
    focal_loss, loss_gradient, numerical_gradient, softmax, truncate, wce_loss, ClassWeightTable, LossKind, LossParams,
    TokenSequence, TruncationMode, TruncationWindow,
};

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_probs(rng: &mut ChaCha8Rng, classes: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error `|a - b| / max(|a|, |b|)` in the L2 norm.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&diff) / l2(a).max(l2(b)).max(1e-12)
}

pub fn weight_identity(rng: &mut ChaCha8Rng, tables: usize) -> Check {
    let mut worst = 0.0f64;
    let mut exact_ok = true;
    for _ in 0..tables {
        let classes = rng.gen_range(2..=9);
        let counts: Vec<u64> = (0..classes).map(|_| rng.gen_range(1..5000)).collect();
        let t = ClassWeightTable::from_counts(&counts).expect("positive counts");
        for (n, (w, wf)) in counts.iter().zip(t.exact.iter().zip(&t.weights)) {
            exact_ok &= *w * *n * t.classes == t.total.into();
            let back = *n as f64 * wf * t.classes as f64;
            worst = worst.max((back - t.total as f64).abs() / t.total as f64);
        }
    }
    check(
        "class weights: n_i * w_i * C = N",
        exact_ok && worst < 1e-12,
        format!("exact={exact_ok}, max float rel err {worst:.2e}"),
    )
}

pub fn focal_reduces_to_wce(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let classes = rng.gen_range(2..=9);
        let probs = random_probs(rng, classes);
        let target = rng.gen_range(0..classes);
        let weights: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.1..5.0)).collect();
        let params = LossParams {
            gamma: 0.0,
            weights: Some(weights),
            strict: true,
        };
        let f = focal_loss(&probs, target, &params).expect("valid");
        let w = wce_loss(&probs, target, &params).expect("valid");
        worst = worst.max((f - w).abs());
    }
    check(
        "focal(gamma=0) == WCE",
        worst <= 1e-12,
        format!("{cases} cases, max abs diff {worst:.2e}"),
    )
}

pub fn focal_half_probability() -> Check {
    let f = focal_loss(&[0.5, 0.5], 0, &LossParams::default()).expect("valid");
    let expected = 0.25 * 2f64.ln();
    check(
        "focal(p=0.5, w=1, gamma=2) = ln(2)/4",
        (f - expected).abs() < 1e-9,
        format!("{f:.12} vs {expected:.12}"),
    )
}

pub fn gradients_match_finite_differences(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst = 0.0f64;
    let mut runs = 0;
    for kind in [LossKind::WeightedCrossEntropy, LossKind::Focal] {
        for gamma in [0.0, 2.0] {
            for _ in 0..cases {
                let classes = rng.gen_range(2..=9);
                let logits: Vec<f64> = (0..classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let target = rng.gen_range(0..classes);
                let weights: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.2..4.0)).collect();
                let params = LossParams {
                    gamma,
                    weights: Some(weights),
                    strict: false,
                };
                let analytic = loss_gradient(&logits, target, &params, kind).expect("valid");
                let numeric = numerical_gradient(&logits, target, &params, kind, FD_STEP).expect("valid");
                worst = worst.max(relative_error(&analytic, &numeric));
                runs += 1;
            }
        }
    }
    check(
        "analytic gradients vs central differences",
        worst < GRADIENT_TOLERANCE,
        format!("{runs} cases, h={FD_STEP:e}, max rel err {worst:.2e}"),
    )
}

pub fn focal_gamma_zero_gradient(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let classes = rng.gen_range(2..=9);
        let logits: Vec<f64> = (0..classes).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let target = rng.gen_range(0..classes);
        let params = LossParams {
            gamma: 0.0,
            ..LossParams::default()
        };
        let f = loss_gradient(&logits, target, &params, LossKind::Focal).expect("valid");
        let w = loss_gradient(&logits, target, &params, LossKind::WeightedCrossEntropy).expect("valid");
        for (a, b) in f.iter().zip(&w) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        "focal(gamma=0) gradient == WCE gradient",
        worst <= 1e-12,
        format!("max abs diff {worst:.2e}"),
    )
}

pub fn softmax_properties(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..cases {
        let classes = rng.gen_range(2..=9);
        let logits: Vec<f64> = (0..classes).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let shift = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let a = softmax(&logits);
        let b = softmax(&shifted);
        worst_sum = worst_sum.max((a.iter().sum::<f64>() - 1.0).abs());
        for (x, y) in a.iter().zip(&b) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    check(
        "softmax sums to 1 and is shift-invariant",
        worst_sum <= 1e-12 && worst_shift <= 1e-12,
        format!("sum err {worst_sum:.2e}, shift err {worst_shift:.2e}"),
    )
}

pub fn head_tail_boundary() -> Check {
    let seq = TokenSequence((0..600u32).collect());
    let out = truncate(&seq, TruncationMode::HeadTail, TruncationWindow::default()).expect("valid window");
    let ok_600 = out.0 == (0..256).chain(344..600).collect::<Vec<u32>>();
    let seq = TokenSequence((0..513u32).collect());
    let out = truncate(&seq, TruncationMode::HeadTail, TruncationWindow::default()).expect("valid window");
    let ok_513 = out.0 == (0..513).filter(|&i| i != 256).collect::<Vec<u32>>();
    check(
        "head-tail truncation keeps first 256 and last 256",
        ok_600 && ok_513,
        format!("len 600 ok={ok_600}, len 513 ok={ok_513}"),
    )
}

/// Runs every check with a fixed seed.
pub fn run_all(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        weight_identity(&mut rng, 200),
        focal_reduces_to_wce(&mut rng, 1000),
        focal_half_probability(),
        gradients_match_finite_differences(&mut rng, 100),
        focal_gamma_zero_gradient(&mut rng, 1000),
        softmax_properties(&mut rng, 1000),
        head_tail_boundary(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
