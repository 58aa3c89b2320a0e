//! Central finite-difference gradient checking.

use super::{Graph, Tensor};
use crate::error::Result;

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_error: f64,
}

/// Compares backward-pass gradients of a scalar function against central
/// differences with step `h`, perturbing every element of every input.
///
/// `build` receives one parameter leaf per input and returns the scalar loss.
pub fn check_gradients<F>(inputs: &[(Vec<usize>, Vec<f64>)], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let eval = |values: &[Vec<f64>], graph: &mut Graph<f64>| -> Result<(Tensor, Vec<Tensor>)> {
        graph.reset();
        let leaves = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| graph.param(shape, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(graph, &leaves)?;
        Ok((loss, leaves))
    };

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut graph = Graph::<f64>::new();
    let (loss, leaves) = eval(&values, &mut graph)?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(&values)
        .map(|(&t, v)| graph.grad(t).map_or_else(|| vec![0.0; v.len()], <[f64]>::to_vec))
        .collect();

    let mut numeric = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let mut row = Vec::with_capacity(values[i].len());
        for j in 0..values[i].len() {
            let orig = values[i][j];
            values[i][j] = orig + h;
            let (lp, _) = eval(&values, &mut graph)?;
            let plus = graph.value(lp)[0];
            values[i][j] = orig - h;
            let (lm, _) = eval(&values, &mut graph)?;
            let minus = graph.value(lm)[0];
            values[i][j] = orig;
            row.push((plus - minus) / (2.0 * h));
        }
        numeric.push(row);
    }

    let max_rel_error = analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}
