use candle_core::Tensor;

use crate::error::Result;
use crate::nn::ops;

fn modulating(one_minus_pt: &Tensor, gamma: f64) -> Result<Option<Tensor>> {
    Ok(if gamma == 0.0 {
        None
    } else if gamma == 1.0 {
        Some(one_minus_pt.clone())
    } else if gamma == 2.0 {
        Some(one_minus_pt.sqr()?)
    } else {
        Some(one_minus_pt.clamp(1e-30, 1.0)?.powf(gamma)?)
    })
}

/// Element-wise `-alpha_t (1 - p_t)^gamma ln p_t` for sigmoid probabilities.
///
/// Uses `ln p_t = -softplus(-z_t)` and `1 - p_t = sigmoid(-z_t)` with
/// `z_t = z` for positives and `-z` for negatives, so saturated logits stay finite.
pub fn focal_loss_elementwise(
    logits: &Tensor,
    targets: &Tensor,
    alpha: f64,
    gamma: f64,
) -> Result<Tensor> {
    let sign = ((targets * 2.0)? - 1.0)?;
    let neg_zt = (logits * &sign)?.neg()?;
    let nll = ops::softplus(&neg_zt)?;
    let alpha_t = ((targets * (2.0 * alpha - 1.0))? + (1.0 - alpha))?;
    let weighted = (nll * alpha_t)?;
    match modulating(&ops::sigmoid(&neg_zt)?, gamma)? {
        Some(m) => Ok((weighted * m)?),
        None => Ok(weighted),
    }
}

/// Mean focal loss over all elements; 0 for empty inputs.
pub fn focal_loss(logits: &Tensor, targets: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    if logits.elem_count() == 0 {
        return Ok(Tensor::zeros((), logits.dtype(), logits.device())?);
    }
    Ok(focal_loss_elementwise(logits, targets, alpha, gamma)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use proptest::prelude::*;

    fn scalar(logit: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
        let l = Tensor::new(&[logit], &Device::Cpu).unwrap();
        let t = Tensor::new(&[target], &Device::Cpu).unwrap();
        focal_loss(&l, &t, alpha, gamma)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    /// Direct transcription of the definition, independent of the stable form.
    fn reference(logit: f64, target: f64, alpha: f64, gamma: f64) -> f64 {
        let p = 1.0 / (1.0 + (-logit).exp());
        let (pt, at) = if target == 1.0 {
            (p, alpha)
        } else {
            (1.0 - p, 1.0 - alpha)
        };
        -at * (1.0 - pt).powf(gamma) * pt.ln()
    }

    #[test]
    fn hand_evaluated_zero_logit() {
        // 0.25 * 0.5^2 * ln 2
        let v = scalar(0.0, 1.0, 0.25, 2.0);
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((v - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        assert!(scalar(20.0, 1.0, 0.25, 2.0) < 1e-6);
        assert!(scalar(-20.0, 0.0, 0.25, 2.0) < 1e-6);
    }

    #[test]
    fn gamma_zero_half_alpha_is_half_bce() {
        let logits: [f64; 5] = [-3.0, -0.5, 0.0, 0.7, 4.0];
        for &z in &logits {
            for &t in &[0.0, 1.0] {
                let p: f64 = 1.0 / (1.0 + (-z).exp());
                let bce = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
                assert!((scalar(z, t, 0.5, 0.0) - 0.5 * bce).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn empty_input_is_zero() {
        let e = Tensor::zeros(0, candle_core::DType::F64, &Device::Cpu).unwrap();
        assert_eq!(
            focal_loss(&e, &e, 0.25, 2.0)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap(),
            0.0
        );
    }

    proptest! {
        #[test]
        fn matches_reference(z in -15.0f64..15.0, t in prop::bool::ANY, alpha in 0.05f64..0.95, gamma in 0.0f64..4.0) {
            let t = if t { 1.0 } else { 0.0 };
            prop_assert!((scalar(z, t, alpha, gamma) - reference(z, t, alpha, gamma)).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_true_class_logit(z in -15.0f64..15.0, dz in 0.0f64..5.0, t in prop::bool::ANY, gamma in 0.0f64..4.0) {
            // raising the logit of the true class: +z for positives, -z for negatives
            let (t, step) = if t { (1.0, dz) } else { (0.0, -dz) };
            prop_assert!(scalar(z + step, t, 0.25, gamma) <= scalar(z, t, 0.25, gamma) + 1e-15);
            prop_assert!(scalar(z, t, 0.25, gamma) >= 0.0);
        }
    }
}
