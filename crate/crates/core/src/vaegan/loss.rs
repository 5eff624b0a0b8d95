use crate::diffcore::{Scalar, Tape, Var};
use crate::error::{Error, Result};

fn batch_len<T: Scalar>(tape: &Tape<T>, v: Var) -> usize {
    tape.shape(v)[0]
}

/// `β · mean_batch ½ Σ_d (μ² + e^logvar − 1 − logvar)`, the KL divergence of
/// a diagonal Gaussian posterior from the standard normal prior.
pub fn loss_prior<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var, beta: f64) -> Result<Var> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(Error::validation("loss_prior: μ and logvar shapes differ"));
    }
    let n = batch_len(tape, mu) as f64;
    let mu2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0)?;
    let s = tape.sum(c)?;
    tape.scale(s, 0.5 * beta / n)
}

/// `mean_batch ½ ‖Dis_l(x) − Dis_l(x̃)‖²`: the negative Gaussian
/// log-likelihood with identity covariance, constant dropped.
pub fn loss_like<T: Scalar>(tape: &mut Tape<T>, features_real: Var, features_recon: Var) -> Result<Var> {
    if tape.shape(features_real) != tape.shape(features_recon) {
        return Err(Error::validation(format!(
            "loss_like: feature shapes {:?} and {:?} differ",
            tape.shape(features_real),
            tape.shape(features_recon)
        )));
    }
    let n = batch_len(tape, features_real) as f64;
    let d = tape.sub(features_real, features_recon)?;
    let sq = tape.square(d)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 0.5 / n)
}

/// `−mean_batch [log Dis(x) + log(1 − Dis(Dec(z_p))) + log(1 − Dis(Dec(Enc(x))))]`
/// with the tape's log clamping.
pub fn loss_gan<T: Scalar>(tape: &mut Tape<T>, p_real: Var, p_fake_prior: Var, p_fake_recon: Var) -> Result<Var> {
    let shape = tape.shape(p_real).to_vec();
    if tape.shape(p_fake_prior) != shape.as_slice() || tape.shape(p_fake_recon) != shape.as_slice() {
        return Err(Error::validation("loss_gan: probability batches differ in shape"));
    }
    let n = batch_len(tape, p_real) as f64;
    let log_real = tape.log(p_real)?;
    let mut total = tape.sum(log_real)?;
    for p in [p_fake_prior, p_fake_recon] {
        let neg = tape.scale(p, -1.0)?;
        let q = tape.add_scalar(neg, 1.0)?;
        let lq = tape.log(q)?;
        let s = tape.sum(lq)?;
        total = tape.add(total, s)?;
    }
    tape.scale(total, -1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Tensor, EPS_LOG};

    fn consts(tape: &mut Tape<f64>, shape: &[usize], v: &[f64]) -> Var {
        tape.constant(Tensor::new(shape.to_vec(), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn prior_zero_at_prior_and_linear_in_beta() {
        let mut t = Tape::new();
        let mu = consts(&mut t, &[2, 3], &[0.0; 6]);
        let lv = consts(&mut t, &[2, 3], &[0.0; 6]);
        let l = loss_prior(&mut t, mu, lv, 4.0).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let mu = consts(&mut t, &[2, 2], &[0.3, -1.0, 2.0, 0.1]);
        let lv = consts(&mut t, &[2, 2], &[0.5, -0.2, 0.0, 1.0]);
        let one = loss_prior(&mut t, mu, lv, 1.0).unwrap();
        let two = loss_prior(&mut t, mu, lv, 2.0).unwrap();
        assert!((t.value(two).item() - 2.0 * t.value(one).item()).abs() < 1e-12);
    }

    #[test]
    fn like_direct_formula() {
        let mut t = Tape::new();
        let a = consts(&mut t, &[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let b = consts(&mut t, &[1, 4], &[0.0, 2.0, 3.0, 4.0]);
        let l = loss_like(&mut t, a, b).unwrap();
        assert_eq!(t.value(l).item(), 0.5);
        let same = loss_like(&mut t, a, a).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
        let c = consts(&mut t, &[1, 3], &[0.0; 3]);
        assert!(loss_like(&mut t, a, c).is_err());
    }

    #[test]
    fn gan_symmetric_and_perfect_discriminator() {
        let mut t = Tape::new();
        let half = consts(&mut t, &[3, 1], &[0.5; 3]);
        let l = loss_gan(&mut t, half, half, half).unwrap();
        assert!((t.value(l).item() - 3.0 * 2f64.ln()).abs() < 1e-12);

        let eps = 1e-6;
        let real = consts(&mut t, &[1, 1], &[1.0 - eps]);
        let fake = consts(&mut t, &[1, 1], &[eps]);
        let l = loss_gan(&mut t, real, fake, fake).unwrap();
        assert!((t.value(l).item() - 3.0 * eps).abs() < 1e-9);
        assert!(EPS_LOG < eps);
    }
}
