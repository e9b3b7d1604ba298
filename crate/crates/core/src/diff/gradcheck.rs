use super::{DiffError, Graph, NodeId, Tensor};

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients with central finite differences for
/// every coordinate of every parameter.
///
/// `build_loss` must add the parameters it receives to the graph (as
/// [`Graph::param`] leaves, returned in the same order) and return a scalar
/// loss node. It is called once for the analytic gradient and twice per
/// coordinate, so it must be deterministic.
pub fn check_gradients<F>(params: &[Tensor], eps: f64, mut build_loss: F) -> Result<GradCheckReport, DiffError>
where
    F: FnMut(&mut Graph, &[Tensor]) -> Result<(Vec<NodeId>, NodeId), DiffError>,
{
    let mut graph = Graph::new();
    let (ids, loss) = build_loss(&mut graph, params)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(id, p)| grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut eval = |ps: &[Tensor]| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let (_, loss) = build_loss(&mut g, ps)?;
        Ok(g.value(loss).item())
    };

    let mut worst = (0, 0);
    let mut max_rel_err = 0.0f64;
    let mut coordinates = 0;
    let mut perturbed = params.to_vec();
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            perturbed[pi].data_mut()[ci] = orig + eps;
            let up = eval(&perturbed)?;
            perturbed[pi].data_mut()[ci] = orig - eps;
            let down = eval(&perturbed)?;
            perturbed[pi].data_mut()[ci] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[pi].data()[ci];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            coordinates += 1;
            if rel > max_rel_err || rel.is_nan() {
                max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = (pi, ci);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        coordinates,
        passed: max_rel_err < GRADCHECK_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let w = Tensor::vector(vec![0.3, -1.5, 2.0]);
        let report = check_gradients(&[w], 1e-5, |g, ps| {
            let w = g.param(ps[0].clone());
            let sq = g.mul(w, w)?;
            Ok((vec![w], g.sum(sq)))
        })
        .unwrap();
        assert!(report.passed);
        assert!(report.max_rel_err < 1e-9, "{}", report.max_rel_err);
    }

    #[test]
    fn corrupted_adjoint_fails() {
        let w = Tensor::vector(vec![0.3, -0.5]);
        let report = check_gradients(&[w], 1e-5, |g, ps| {
            g.corrupt_tanh_adjoint(1.1);
            let w = g.param(ps[0].clone());
            let t = g.tanh(w);
            Ok((vec![w], g.sum(t)))
        })
        .unwrap();
        assert!(!report.passed);
    }
}
