//! Classification projection and the per-flow cross-entropy loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, ShapeError, Tape, Tensor, Var, LOG_FLOOR};
use crate::tokenizer::init_uniform;

pub const THRESHOLD: f64 = 0.5;

/// `sigmoid((h Wp + bp) Wc + bc)` per position.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationHead {
    pub d_model: usize,
    pub d_proj: usize,
    ids: [ParamId; 4],
}

impl ClassificationHead {
    pub const PREFIX: &'static str = "head.";

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, d_model: usize, d_proj: usize, rng: &mut impl Rng) -> Self {
        let wp = store.add("head.wp", init_uniform(rng, &[d_model, d_proj], d_model));
        let bp = store.add("head.bp", init_uniform(rng, &[d_proj], d_model));
        let wc = store.add("head.wc", init_uniform(rng, &[d_proj, 1], d_proj));
        let bc = store.add("head.bc", init_uniform(rng, &[1], d_proj));
        Self {
            d_model,
            d_proj,
            ids: [wp, bp, wc, bc],
        }
    }

    /// Projection width used when none is given: half the model width.
    pub fn default_proj(d_model: usize) -> usize {
        (d_model / 2).max(1)
    }

    pub fn params(&self) -> [ParamId; 4] {
        self.ids
    }

    /// Pre-sigmoid scores `[batch, seq]` from hidden states `[batch, seq, d_model]`.
    pub fn logits<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, hidden: Var) -> Result<Var, ShapeError> {
        let shape = tape.shape(hidden).to_vec();
        if shape.len() != 3 {
            return Err(ShapeError::new("classify", format!("expected [batch, seq, d_model], got {shape:?}")));
        }
        let [wp, bp, wc, bc] = self.params().map(|id| tape.param(store, id));
        let z = tape.matmul(hidden, wp)?;
        let z = tape.add(z, bp)?;
        let z = tape.matmul(z, wc)?;
        let z = tape.add(z, bc)?;
        tape.reshape(z, &shape[..2])
    }

    /// Attack probabilities `[batch, seq]`.
    pub fn classify<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, hidden: Var) -> Result<Var, ShapeError> {
        let z = self.logits(tape, store, hidden)?;
        Ok(tape.sigmoid(z))
    }
}

pub fn is_attack(p: f64) -> bool {
    p > THRESHOLD
}

/// Cross-entropy over the non-duplicate positions of each sequence, averaged
/// over sequences.
///
/// `p` has shape `[batch, seq]`; `labels` and `dup` are row-major of the same
/// size. A sequence made only of duplicates contributes zero.
pub fn sequence_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, labels: &[f32], dup: &[bool]) -> Result<Var> {
    let shape = tape.shape(p).to_vec();
    let n = tape.value(p).numel();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if dup.len() != n {
        return Err(Error::LengthMismatch { left: n, right: dup.len() });
    }
    let seq = *shape.last().unwrap_or(&1);
    let batch = n.checked_div(seq).unwrap_or(0);
    let mut w_pos = vec![T::zero(); n];
    let mut w_neg = vec![T::zero(); n];
    for b in 0..batch {
        let row = b * seq..(b + 1) * seq;
        let genuine = dup[row.clone()].iter().filter(|d| !**d).count();
        if genuine == 0 {
            continue;
        }
        let w = 1.0 / (genuine as f64 * batch as f64);
        for i in row {
            if !dup[i] {
                let y = labels[i] as f64;
                w_pos[i] = T::lit(y * w);
                w_neg[i] = T::lit((1.0 - y) * w);
            }
        }
    }
    let w_pos = tape.constant(Tensor::new(shape.clone(), w_pos)?);
    let w_neg = tape.constant(Tensor::new(shape, w_neg)?);
    let log_p = tape.log(p);
    let one_minus = tape.scale(p, -T::one());
    let one_minus = tape.add_scalar(one_minus, T::one());
    let log_q = tape.log(one_minus);
    let a = tape.mul(w_pos, log_p)?;
    let b = tape.mul(w_neg, log_q)?;
    let total = tape.add(a, b)?;
    let total = tape.sum(total);
    Ok(tape.scale(total, -T::one()))
}

/// Plain-number form of the loss for a single sequence.
pub fn loss(p: &[f64], y: &[f64], dup: &[bool]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: y.len() });
    }
    if p.len() != dup.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: dup.len() });
    }
    let genuine = dup.iter().filter(|d| !**d).count();
    if genuine == 0 {
        return Ok(0.0);
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .zip(dup)
        .filter(|(_, d)| !**d)
        .map(|((&p, &y), _)| y * p.max(LOG_FLOOR).ln() + (1.0 - y) * (1.0 - p).max(LOG_FLOOR).ln())
        .sum();
    Ok(-sum / genuine as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{grad_check, grad_check_param};

    #[test]
    fn closed_form_values() {
        let l = loss(&[0.9, 0.1], &[1.0, 0.0], &[false, false]).unwrap();
        assert!((l - 0.10536).abs() < 1e-5);
        let l = loss(&[0.5], &[1.0], &[false]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = loss(&[1.0 - 1e-15], &[1.0], &[false]).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            loss(&[0.5, 0.5], &[1.0], &[false, false]),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn tape_loss_matches_closed_form() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(vec![2, 3], vec![0.9, 0.1, 0.3, 0.2, 0.6, 0.7]).unwrap());
        let y = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let dup = [false, false, true, false, false, false];
        let l = sequence_loss(&mut tape, p, &y, &dup).unwrap();
        let got = tape.value(l).item().unwrap();
        let row = |r: usize| {
            let p: Vec<f64> = tape.value(p).data()[r * 3..r * 3 + 3].to_vec();
            let y: Vec<f64> = y[r * 3..r * 3 + 3].iter().map(|&v| v as f64).collect();
            loss(&p, &y, &dup[r * 3..r * 3 + 3]).unwrap()
        };
        assert!((got - (row(0) + row(1)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_labels_do_not_matter() {
        let eval = |y2: f32| {
            let mut tape = Tape::<f32>::new();
            let p = tape.constant(Tensor::new(vec![1, 3], vec![0.8, 0.3, 0.3]).unwrap());
            let l = sequence_loss(&mut tape, p, &[1.0, 0.0, y2], &[false, false, true]).unwrap();
            tape.value(l).item().unwrap().to_bits()
        };
        assert_eq!(eval(0.0), eval(1.0));
    }

    #[test]
    fn logit_gradient_closed_form() {
        let z = Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let y = [1.0f32, 0.0, 0.0, 1.0];
        let dup = [false, false, false, true];
        let mut tape = Tape::<f64>::new();
        let zv = tape.leaf(z.clone(), true);
        let p = tape.sigmoid(zv);
        let l = sequence_loss(&mut tape, p, &y, &dup).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(zv).unwrap();
        for i in 0..4 {
            let p = 1.0 / (1.0 + (-z.data()[i]).exp());
            let want = if dup[i] { 0.0 } else { (p - y[i] as f64) / 3.0 };
            assert!((g[i] - want).abs() < 1e-12);
        }
        let report = grad_check(
            |tape, zv| {
                let p = tape.sigmoid(zv);
                sequence_loss(tape, p, &y, &dup).map_err(|e| match e {
                    Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })
            },
            &z,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(report.passed);
    }

    #[test]
    fn zero_weights_give_half() {
        let mut store = ParamStore::<f32>::new();
        let head = ClassificationHead::new(&mut store, 8, 4, &mut ChaCha8Rng::seed_from_u64(0));
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::full(&[2, 5, 8], 1.3));
        let p = head.classify(&mut tape, &store, h).unwrap();
        assert_eq!(tape.shape(p), &[2, 5]);
        assert!(tape.value(p).data().iter().all(|&v| v == 0.5));
        assert!(!is_attack(0.5));
    }

    #[test]
    fn higher_logit_higher_probability() {
        let mut store = ParamStore::<f64>::new();
        let head = ClassificationHead::new(&mut store, 4, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let bc = head.params()[3];
        let prob = |store: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let h = tape.constant(Tensor::full(&[1, 1, 4], 0.2));
            let p = head.classify(&mut tape, store, h).unwrap();
            tape.value(p).data()[0]
        };
        let before = prob(&store);
        store.get_mut(bc).value.data_mut()[0] += 0.5;
        assert!(prob(&store) > before);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let head = ClassificationHead::new(&mut store, 8, 4, &mut ChaCha8Rng::seed_from_u64(5));
        let h = Tensor::from_fn(&[2, 3, 8], |i| (i as f64 * 0.41).cos());
        let y = [1.0f32, 0.0, 1.0, 0.0, 0.0, 1.0];
        let dup = [false; 6];
        for id in head.params() {
            let report = grad_check_param(
                |tape, store| {
                    let hv = tape.constant(h.clone());
                    let p = head.classify(tape, store, hv)?;
                    sequence_loss(tape, p, &y, &dup).map_err(|e| match e {
                        Error::Tensor(t) => t,
                        other => panic!("{other}"),
                    })
                },
                &store,
                id,
                1e-3,
                1e-3,
            )
            .unwrap();
            assert!(report.passed, "{}: {}", store.get(id).name, report.max_rel_error);
        }
    }
}
