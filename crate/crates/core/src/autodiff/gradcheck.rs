use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst relative error
/// `|analytic - numeric| / (|numeric| + 1e-12)` over all coordinates.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&tape, xv)?;
    if !out.value_ref().all_finite() {
        return Err(Error::Numeric("finite_difference_check: f(x)".into()));
    }
    let analytic = tape.backward(out)?.wrt(xv);

    let eval = |p: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, tape.constant(p.clone()))?.value().item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("finite_difference_check: f(x ± h)".into()))
        }
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let hi = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let lo = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (hi - lo) / (2.0 * step);
        let err = (analytic.data()[i] - numeric).abs() / (numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![3.0]);
        let err = finite_difference_check(|_, v| v.square()?.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![0.3, -1.2]);
        let err = finite_difference_check(
            |t, v| {
                let zero = t.constant(Tensor::scalar(0.0));
                v.sum()?.mul(zero)?.add_scalar(4.0)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn mean_sigmoid_of_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = Tensor::matrix(4, 3, w).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::matrix(3, 1, x).unwrap();
            let err = finite_difference_check(
                |t, v| t.constant(w.clone()).matmul(v)?.sigmoid()?.mean(),
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn every_smooth_primitive() {
        let x = Tensor::matrix(2, 3, vec![0.3, 0.8, 1.5, 0.2, 0.9, 1.1]).unwrap();
        let row = Tensor::vector(vec![0.5, -0.25, 2.0]);
        let err = finite_difference_check(
            |t, v| {
                let r = t.constant(row.clone());
                let a = v.exp()?.add(v.ln()?)?.sub(v.tanh()?)?;
                let b = v.mul(r)?.square()?.add(v.sqrt()?)?;
                let c = a.concat_cols(b)?.log_softmax()?.sum_rows()?;
                let d = v.softmax()?.mul(v)?.row_max()?;
                let e = v.add(r)?.abs()?.max_const(0.1)?.clamp(-5.0, 5.0)?.mean()?;
                c.sum()?.add(d.sum()?)?.add(e)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
