use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Per-tensor coordinate sampling for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Probe at most this many coordinates per tensor (at least 50).
    /// `None` probes every coordinate.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, max_per_tensor: Some(50), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub probed: usize,
}

fn eval<F>(build: &F, params: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::validation("grad_check: loss must be scalar"));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::overflow("grad_check probe"));
    }
    Ok(v)
}

/// Compare reverse-mode gradients of `build` against central differences.
///
/// Relative error per coordinate is `|g_ad − g_fd| / max(1e−8, |g_ad| + |g_fd|)`;
/// the maximum over probed coordinates is returned.
pub fn grad_check<F>(build: F, params: &ParamStore<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&opts.h) {
        return Err(Error::validation(format!("grad_check: h = {} outside [1e-6, 1e-3]", opts.h)));
    }
    if let Some(k) = opts.max_per_tensor {
        if k < 50 {
            return Err(Error::validation("grad_check: subsample must be at least 50 per tensor"));
        }
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    let analytic = tape.backward(loss)?.for_params(params);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, probed: 0 };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base = params.get(&name)?.clone();
        let n = base.len();
        let coords: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < n => {
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let g_ad = analytic.get(&name).expect("aligned with store");
        for i in coords {
            let mut plus = base.clone();
            plus.data_mut()[i] += opts.h;
            probe.set(&name, plus)?;
            let lp = eval(&build, &probe)?;
            let mut minus = base.clone();
            minus.data_mut()[i] -= opts.h;
            probe.set(&name, minus)?;
            let lm = eval(&build, &probe)?;
            probe.set(&name, base.clone())?;

            let fd = (lp - lm) / (2.0 * opts.h);
            let ad = g_ad.data()[i];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            report.probed += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap())
            .unwrap();
        let report = grad_check(
            |tape, p| {
                let w = tape.param(p, "w")?;
                let sq = tape.square(w)?;
                let s = tape.sum(sq)?;
                tape.scale(s, 0.5)
            },
            &store,
            GradCheckOptions { h: 1e-4, max_per_tensor: None, seed: 1 },
        )
        .unwrap();
        assert_eq!(report.probed, 12);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let mut store = ParamStore::new();
        // All inputs at least 0.1 from zero, far beyond 10·h.
        let vals: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.1 + i as f64 * 0.05 } else { -0.1 - i as f64 * 0.03 }).collect();
        store.insert("x", Tensor::new(vec![60], vals).unwrap()).unwrap();
        let report = grad_check(
            |tape, p| {
                let x = tape.param(p, "x")?;
                let a = tape.leaky_relu(x, 0.2)?;
                let sq = tape.square(a)?;
                tape.sum(sq)
            },
            &store,
            GradCheckOptions { h: 1e-5, max_per_tensor: None, seed: 0 },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn rejects_out_of_range_step() {
        let store = ParamStore::<f64>::new();
        let r = grad_check(|t, _| t.constant(Tensor::scalar(0.0)), &store, GradCheckOptions { h: 0.1, ..Default::default() });
        assert!(matches!(r, Err(Error::Validation(_))));
    }
}
