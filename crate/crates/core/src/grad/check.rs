use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over the checked coordinates.
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn evaluate<F>(program: &F, inputs: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = program(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NotScalar(tape.shape(out).to_vec()));
    }
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of `program` against central differences
/// for every coordinate of every input that requires grad.
pub fn finite_diff_check<F>(program: F, inputs: &[Tensor], h: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.requires_grad())
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    finite_diff_check_coords(program, inputs, h, &coords)
}

/// Same as [`finite_diff_check`], restricted to the listed `(input, index)`
/// coordinates.
pub fn finite_diff_check_coords<F>(
    program: F,
    inputs: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid(format!("finite-difference step {h} outside (0, 1e-2]")));
    }
    for (i, t) in inputs.iter().enumerate() {
        if let Some(j) = t.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { input: i, index: j });
        }
    }

    let (tape, vars, out) = evaluate(&program, inputs)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &(i, j) in coords {
        let analytic = grads.wrt(vars[i]).map_or(0.0, |g| g[j]);
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let (t_plus, _, o_plus) = evaluate(&program, &work)?;
        let f_plus = t_plus.scalar(o_plus);
        work[i].data_mut()[j] = orig - h;
        let (t_minus, _, o_minus) = evaluate(&program, &work)?;
        let f_minus = t_minus.scalar(o_minus);
        work[i].data_mut()[j] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() || !analytic.is_finite() {
            return Err(Error::NonFinite { input: i, index: j });
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some((i, j));
        }
        report.checked += 1;
    }
    Ok(report)
}
