//! Finite-difference gradient checker (five-point central stencil).

use rand::seq::index::sample;

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(tensor index, flat coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<T, F>(loss_fn: &F, params: &[Tensor<T>]) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let v = tape.value(loss).item().f64();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss {v}")));
    }
    Ok((tape, vars, loss))
}

/// Compare tape gradients with central differences on up to `max_coords`
/// coordinates, spread over all tensors in proportion to their size (at
/// least two per tensor where available).
pub fn grad_check<T, F>(
    loss_fn: F,
    params: &[Tensor<T>],
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, loss) = evaluate(&loss_fn, params)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.f64()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();
    drop(tape);

    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut rng = stream_rng(seed, Stream::Eval, &[0x6772_6164]);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
        tol,
    };
    let mut work: Vec<Tensor<T>> = params.to_vec();
    for (ti, p) in params.iter().enumerate() {
        let n = p.numel();
        let share = if total <= max_coords {
            n
        } else {
            ((max_coords * n).div_ceil(total)).max(2).min(n)
        };
        let coords = sample(&mut rng, n, share).into_vec();
        for c in coords {
            let orig = p.data()[c];
            let mut at = |step: f64| -> Result<f64> {
                work[ti].data_mut()[c] = T::of(orig.f64() + step);
                loss_value(&loss_fn, &work)
            };
            let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            work[ti].data_mut()[c] = orig;
            // Five-point stencil: truncation error O(eps^4), so eps can be
            // large enough to keep f64 round-off well below tiny gradients.
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let err = relative_error(analytic[ti][c], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, c, analytic[ti][c], numeric));
            }
        }
    }
    Ok(report)
}

fn loss_value<T, F>(loss_fn: &F, params: &[Tensor<T>]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (tape, _, loss) = evaluate(loss_fn, params)?;
    Ok(tape.value(loss).item().f64())
}
