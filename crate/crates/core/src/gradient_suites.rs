//! Finite-difference suites over every graph primitive, the composed
//! InfoNCE loss and the CTC loss.

use rand::Rng as _;

use crate::cpc::{batch_loss_with, CpcConfig, CpcModel};
use crate::diff::{check_gradients, DiffError, GradCheckReport, Graph, NodeId, Tensor, GRADCHECK_TOLERANCE};
use crate::probe::ctc_loss_node;
use crate::rng;

pub const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: Vec<(String, GradCheckReport)>,
}

impl SuiteReport {
    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|(_, r)| r.passed)
    }
}

/// Options for [`run_all`]. `corrupt_tanh` scales the tanh adjoint in every
/// graph so the suites can be shown to catch a broken rule.
#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    pub corrupt_tanh: Option<f64>,
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng::derive(seed, 11);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).expect("positive dims")
}

/// Scalar `Σ x ⊙ w` with fixed `w`, so every output coordinate receives a
/// distinct upstream gradient.
fn project(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId, DiffError> {
    let w = g.input(random_tensor(g.shape(x), -1.0, 1.0, seed ^ 0xABCD));
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}

type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>>;

fn primitive_cases() -> Vec<(&'static str, Vec<Tensor>, Builder)> {
    let t = random_tensor;
    vec![
        ("add", vec![t(&[3, 4], -1.0, 1.0, 1), t(&[3, 4], -1.0, 1.0, 2)], Box::new(|g, p| g.add(p[0], p[1]))),
        ("sub", vec![t(&[3, 4], -1.0, 1.0, 3), t(&[3, 4], -1.0, 1.0, 4)], Box::new(|g, p| g.sub(p[0], p[1]))),
        ("mul", vec![t(&[3, 4], -1.0, 1.0, 5), t(&[3, 4], -1.0, 1.0, 6)], Box::new(|g, p| g.mul(p[0], p[1]))),
        ("add_bias", vec![t(&[2, 3, 4], -1.0, 1.0, 7), t(&[4], -1.0, 1.0, 8)], Box::new(|g, p| g.add_bias(p[0], p[1]))),
        ("scale", vec![t(&[5], -1.0, 1.0, 9)], Box::new(|g, p| Ok(g.scale(p[0], -2.5)))),
        ("tanh", vec![t(&[6], -2.0, 2.0, 10)], Box::new(|g, p| Ok(g.tanh(p[0])))),
        ("sigmoid", vec![t(&[6], -3.0, 3.0, 11)], Box::new(|g, p| Ok(g.sigmoid(p[0])))),
        // magnitudes kept away from the kink at zero
        ("relu", vec![Tensor::vector(vec![-1.2, 0.7, -0.3, 2.1, 0.4, -0.9])], Box::new(|g, p| Ok(g.relu(p[0])))),
        ("exp", vec![t(&[6], -1.0, 1.0, 12)], Box::new(|g, p| Ok(g.exp(p[0])))),
        ("log", vec![t(&[6], 0.5, 3.0, 13)], Box::new(|g, p| Ok(g.log(p[0])))),
        ("matmul", vec![t(&[3, 4], -1.0, 1.0, 14), t(&[4, 2], -1.0, 1.0, 15)], Box::new(|g, p| g.matmul(p[0], p[1]))),
        (
            "conv1d",
            vec![t(&[2, 11, 3], -1.0, 1.0, 16), t(&[9, 4], -0.5, 0.5, 17), t(&[4], -0.5, 0.5, 18)],
            Box::new(|g, p| g.conv1d(p[0], p[1], p[2], 3, 2)),
        ),
        ("concat", vec![t(&[2, 3], -1.0, 1.0, 19), t(&[2, 2], -1.0, 1.0, 20)], Box::new(|g, p| g.concat(&[p[0], p[1]]))),
        ("log_softmax", vec![t(&[3, 5], -2.0, 2.0, 21)], Box::new(|g, p| Ok(g.log_softmax(p[0])))),
        ("slice", vec![t(&[4, 5], -1.0, 1.0, 22)], Box::new(|g, p| g.slice(p[0], 1, 1, 4))),
        ("reshape", vec![t(&[2, 6], -1.0, 1.0, 23)], Box::new(|g, p| g.reshape(p[0], &[3, 4]))),
        ("sum", vec![t(&[2, 3], -1.0, 1.0, 24)], Box::new(|g, p| Ok(g.sum(p[0])))),
        ("mean", vec![t(&[2, 3], -1.0, 1.0, 25)], Box::new(|g, p| Ok(g.mean(p[0])))),
        ("sum_last", vec![t(&[3, 4], -1.0, 1.0, 26)], Box::new(|g, p| Ok(g.sum_last(p[0])))),
        ("gather_rows", vec![t(&[4, 3], -1.0, 1.0, 27)], Box::new(|g, p| g.gather_rows(p[0], vec![2, 0, 2, 3]))),
    ]
}

fn run_case(
    params: &[Tensor],
    corrupt: Option<f64>,
    build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
) -> Result<GradCheckReport, DiffError> {
    check_gradients(params, FD_EPS, |g, ps| {
        if let Some(s) = corrupt {
            g.corrupt_tanh_adjoint(s);
        }
        let ids: Vec<NodeId> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = build(g, &ids)?;
        Ok((ids, out))
    })
}

pub fn primitives_suite(options: SuiteOptions) -> Result<SuiteReport, DiffError> {
    let mut cases = Vec::new();
    for (i, (name, params, build)) in primitive_cases().into_iter().enumerate() {
        let report = run_case(&params, options.corrupt_tanh, |g, ids| {
            let out = build(g, ids)?;
            project(g, out, i as u64)
        })?;
        cases.push((name.to_owned(), report));
    }
    Ok(SuiteReport {
        suite: "primitives",
        cases,
    })
}

/// Summed InfoNCE of a small CPC model on one short window, gradients
/// with respect to every model parameter.
pub fn info_nce_suite(options: SuiteOptions) -> Result<SuiteReport, DiffError> {
    let config = CpcConfig {
        enc_channels: vec![4, 4],
        enc_kernels: vec![4, 3],
        enc_strides: vec![2, 2],
        latent_dim: 4,
        context_dim: 3,
        k_steps: 2,
        n_negatives: 3,
        window_samples: 48,
        seed: 3,
        ..CpcConfig::default()
    };
    let model = CpcModel::new(&config).map_err(|e| DiffError::ShapeMismatch(e.to_string()))?;
    let window = random_tensor(&[config.window_samples], -0.5, 0.5, 29).into_data();
    // O(1) weights: the training init leaves gradients near the
    // finite-difference noise floor
    let params: Vec<Tensor> = model
        .parameters()
        .into_iter()
        .enumerate()
        .map(|(i, p)| random_tensor(p.shape(), -0.8, 0.8, 300 + i as u64))
        .collect();
    let names = model.parameter_names();
    let report = check_gradients(&params, FD_EPS, |g, ps| {
        if let Some(s) = options.corrupt_tanh {
            g.corrupt_tanh_adjoint(s);
        }
        let m = CpcModel::from_parameters(model.arch.clone(), ps.to_vec()).map_err(|e| DiffError::ShapeMismatch(e.to_string()))?;
        let nodes = m.register(g, true);
        // identical negatives in every evaluation
        let mut r = rng::seeded(31);
        let (loss, _) = batch_loss_with(&m, g, &nodes, &[&window], config.n_negatives, &mut r)
            .map_err(|e| DiffError::ShapeMismatch(e.to_string()))?;
        Ok((nodes.ids(), loss))
    })?;
    Ok(SuiteReport {
        suite: "info_nce",
        cases: vec![(format!("summed loss, worst in {}", names[report.worst.0]), report)],
    })
}

/// CTC loss over `log_softmax(logits)` with `T = 5`, `V = 4`.
pub fn ctc_suite(options: SuiteOptions) -> Result<SuiteReport, DiffError> {
    let logits = random_tensor(&[5, 4], -2.0, 2.0, 37);
    let mut cases = Vec::new();
    for targets in [vec![1, 2, 2], vec![3, 1], vec![]] {
        let report = run_case(std::slice::from_ref(&logits), options.corrupt_tanh, |g, ids| {
            let lp = g.log_softmax(ids[0]);
            ctc_loss_node(g, lp, &targets).map_err(|e| DiffError::ShapeMismatch(e.to_string()))
        })?;
        cases.push((format!("ctc targets {targets:?}"), report));
    }
    Ok(SuiteReport { suite: "ctc", cases })
}

pub fn run_all(options: SuiteOptions) -> Result<Vec<SuiteReport>, DiffError> {
    Ok(vec![primitives_suite(options)?, info_nce_suite(options)?, ctc_suite(options)?])
}

/// Human-readable summary, one line per suite plus failing cases.
pub fn render(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{:<11} {} max rel err {:.3e} over {} case(s)\n",
            r.suite,
            if r.passed() { "PASS" } else { "FAIL" },
            r.max_rel_err(),
            r.cases.len()
        ));
        for (name, c) in r.cases.iter().filter(|(_, c)| !c.passed) {
            out.push_str(&format!("  {name}: {:.3e} (tolerance {GRADCHECK_TOLERANCE:e})\n", c.max_rel_err));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        let reports = run_all(SuiteOptions::default()).unwrap();
        for r in &reports {
            assert!(r.passed(), "{}", render(&reports));
        }
    }

    #[test]
    fn corrupted_tanh_is_caught() {
        let options = SuiteOptions { corrupt_tanh: Some(1.5) };
        assert!(!primitives_suite(options).unwrap().passed());
        assert!(!info_nce_suite(options).unwrap().passed());
        assert!(ctc_suite(options).unwrap().passed());
    }
}
