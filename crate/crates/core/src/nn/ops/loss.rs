use crate::error::{Error, Result};
use crate::nn::{Real, Tensor, Var};

/// Probability floor inside the log of [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over pixels of `-ln max(p[target], 1e-12)`.
///
/// `probs` is `(N, C, ...)` holding a distribution along axis 1; `labels`
/// lists the target class of every `(n, ...)` position in row-major order.
pub fn cross_entropy<'t, T: Real>(probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let p = probs.value();
    if p.rank() < 2 {
        return Err(Error::Config("cross_entropy needs (N, C, ...) probabilities".into()));
    }
    let (n, c) = (p.shape()[0], p.shape()[1]);
    let inner: usize = p.shape()[2..].iter().product();
    if labels.len() != n * inner {
        return Err(Error::Config(format!(
            "{} labels for {} pixels",
            labels.len(),
            n * inner
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidInput(format!("label {bad} outside {c} classes")));
    }
    let count = labels.len().max(1);
    let floor = T::of(PROB_FLOOR);
    let idx = move |pix: usize, l: usize| ((pix / inner) * c + l) * inner + pix % inner;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(pix, &l)| -p.data()[idx(pix, l)].max(floor).as_f64().ln())
        .sum();
    let labels = labels.to_vec();
    let shape = p.shape().to_vec();
    Ok(probs.tape.push_op(
        Tensor::scalar(T::of(total / count as f64)),
        &[probs],
        Box::new(move |g, _| {
            let scale = g.item() / T::of(count as f64);
            let mut d = Tensor::zeros(&shape);
            for (pix, &l) in labels.iter().enumerate() {
                let i = idx(pix, l);
                let v = p.data()[i];
                if v > floor {
                    d.data_mut()[i] = -scale / v;
                }
            }
            vec![Some(d)]
        }),
    ))
}

/// Mean squared difference.
pub fn mse<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a.sub(b)?.square().mean())
}

/// Mean absolute difference.
pub fn l1<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a.sub(b)?.abs().mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;

    #[test]
    fn uniform_four_class_is_ln4() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(&[1, 4, 2, 3], 0.25));
        let l = cross_entropy(p, &[0, 1, 2, 3, 0, 1]).unwrap();
        assert!((l.item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_hand_case() {
        let tape = Tape::<f64>::new();
        // pixel 0 targets class 0 (p = 0.5), pixel 1 targets class 1 (p = 0.25)
        let p = tape.constant(Tensor::from_f64(&[1, 2, 2], &[0.5, 0.75, 0.5, 0.25]).unwrap());
        let l = cross_entropy(p, &[0, 1]).unwrap();
        let expect = (-(0.5f64).ln() - (0.25f64).ln()) / 2.0;
        assert!((l.item() - expect).abs() < 1e-12);
        assert!((l.item() - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn bad_label_is_invalid_input() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(&[1, 4, 1], 0.25));
        assert!(matches!(cross_entropy(p, &[4]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mse_hand_case() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
        assert_eq!(mse(a, b).unwrap().item(), 12.5);
        assert_eq!(l1(a, b).unwrap().item(), 3.5);
    }
}
