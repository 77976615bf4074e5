use super::{Graph, NodeId, Result, Tensor};

/// Outcome of one finite-difference comparison. The raw analytic and numeric
/// buffers are kept so tests can re-evaluate after deliberate corruption.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// One (analytic, numeric) gradient pair per parameter tensor.
    pub per_param: Vec<(Vec<f64>, Vec<f64>)>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Worst-case relative error between an analytic and a numeric gradient
/// buffer, with a small absolute floor so near-zero gradients compare fairly.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences (h = 1e-5) at the given parameter point.
///
/// `f` must rebuild the same forward pass each call: it receives a fresh graph
/// and the current parameters and returns the scalar loss node. Parameters are
/// registered as leaves inside `f` via [`Graph::leaf`] with their slot index.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], tolerance: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Graph, &[Tensor]) -> Result<NodeId>,
{
    const H: f64 = 1e-5;
    let mut params: Vec<Tensor> = params
        .iter()
        .cloned()
        .map(|p| p.with_grad())
        .collect();

    // analytic pass
    let mut graph = Graph::new();
    let loss = f(&mut graph, &params)?;
    graph.backward(loss)?;
    for p in params.iter_mut() {
        p.zero_grad();
    }
    graph.accumulate_param_grads(&mut params);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad.clone().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    // numeric pass
    let mut per_param = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut numeric = vec![0.0; params[pi].len()];
        for ei in 0..params[pi].len() {
            let orig = params[pi].data[ei];
            params[pi].data[ei] = orig + H;
            let mut g = Graph::new();
            let l = f(&mut g, &params)?;
            let up = g.value(l)[0];
            params[pi].data[ei] = orig - H;
            let mut g = Graph::new();
            let l = f(&mut g, &params)?;
            let down = g.value(l)[0];
            params[pi].data[ei] = orig;
            numeric[ei] = (up - down) / (2.0 * H);
        }
        per_param.push((analytic[pi].clone(), numeric));
    }

    let max_rel_error = per_param
        .iter()
        .map(|(a, n)| max_relative_error(a, n))
        .fold(0.0, f64::max);
    Ok(FiniteDiffReport {
        per_param,
        max_rel_error,
        pass: max_rel_error < tolerance,
    })
}
