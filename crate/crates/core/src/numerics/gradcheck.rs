use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use super::TensorError;

/// Gradient magnitudes below this are compared on an absolute rather than
/// relative scale; central differences cannot resolve relative error there.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max_i |a_i - n_i| / max(|a_i|, |n_i|, GRAD_CHECK_FLOOR)`
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn from_pairs(analytic: Vec<f64>, numeric: Vec<f64>, tolerance: f64) -> Self {
        let mut worst = (0.0f64, 0usize);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, i);
            }
        }
        Self {
            analytic,
            numeric,
            max_rel_error: worst.0,
            worst_index: worst.1,
            tolerance,
            passed: worst.0 <= tolerance,
        }
    }
}

fn scalar_of<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<f64, TensorError> {
    tape.value(v)
        .item()
        .map(Scalar::to_f64_lossy)
        .ok_or_else(|| TensorError::NonScalarLoss(tape.shape(v).to_vec()))
}

/// Compares the tape's gradient of `f` at `x` against central differences
/// with step `h`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(xv) {
        Some(g) => g.iter().map(|v| v.to_f64_lossy()).collect(),
        None => vec![0.0; x.numel()],
    };

    let eval = |probe: Tensor<T>| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let v = t.leaf(probe, false);
        let out = f(&mut t, v)?;
        scalar_of(&t, out)
    };
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] = plus.data()[i] + T::lit(h);
        let mut minus = x.clone();
        minus.data_mut()[i] = minus.data()[i] - T::lit(h);
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric, tol))
}

/// Same comparison for one parameter of a store.
pub fn grad_check_param<T, F>(
    f: F,
    store: &ParamStore<T>,
    id: ParamId,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, TensorError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var, TensorError>,
{
    let mut work = store.clone();
    work.get_mut(id).frozen = false;
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    tape.backward(out)?;
    tape.accumulate_into(&mut work);
    let analytic: Vec<f64> = work.get(id).grad.iter().map(|v| v.to_f64_lossy()).collect();

    let n = store.get(id).value.numel();
    let mut numeric = Vec::with_capacity(n);
    for i in 0..n {
        let orig = work.get(id).value.data()[i];
        let mut probe = |delta: f64| -> Result<f64, TensorError> {
            work.get_mut(id).value.data_mut()[i] = orig + T::lit(delta);
            let mut t = Tape::new();
            let out = f(&mut t, &work)?;
            scalar_of(&t, out)
        };
        let up = probe(h)?;
        let down = probe(-h)?;
        work.get_mut(id).value.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric, tol))
}
