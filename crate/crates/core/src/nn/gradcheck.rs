use super::params::ParamStore;
use crate::error::Result;
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Entries checked per tensor; `None` checks every entry.
    pub per_tensor: Option<usize>,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            per_tensor: Some(6),
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare analytic gradients against central differences.
///
/// `eval` returns the scalar loss and its gradient for a parameter set. The
/// relative error of one entry is `|a − n| / max(|a|, |n|, floor)`, so a
/// sign-flipped gradient scores 2.
pub fn grad_check<F>(params: &ParamStore, eval: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamStore)>,
{
    let (_, analytic) = eval(params)?;
    let mut rng = Xoshiro256::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let n = tensor.data.len();
        let indices: Vec<usize> = match opts.per_tensor {
            Some(k) if k < n => {
                let mut perm = rng.permutation(n);
                perm.truncate(k);
                perm
            }
            _ => (0..n).collect(),
        };
        let grad = &analytic.get(name)?.data;
        for i in indices {
            let original = tensor.data[i];
            probe.get_mut(name)?.data[i] = original + opts.step;
            let (up, _) = eval(&probe)?;
            probe.get_mut(name)?.data[i] = original - opts.step;
            let (down, _) = eval(&probe)?;
            probe.get_mut(name)?.data[i] = original;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![values.len()], values).unwrap());
        p
    }

    /// f(w) = Σ w³, gradient 3w² (optionally corrupted).
    fn cubic(scale: f64) -> impl Fn(&ParamStore) -> Result<(f64, ParamStore)> {
        move |p: &ParamStore| {
            let w = &p.get("w")?.data;
            let grad = w.iter().map(|v| scale * 3.0 * v * v).collect();
            Ok((w.iter().map(|v| v.powi(3)).sum(), store(grad)))
        }
    }

    #[test]
    fn exact_gradient_passes() {
        let p = store(vec![0.3, -1.2, 2.0, 0.7]);
        let r = grad_check(
            &p,
            cubic(1.0),
            GradCheckOptions {
                per_tensor: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn sign_flip_scores_two() {
        let p = store(vec![0.5, 1.5]);
        let r = grad_check(&p, cubic(-1.0), GradCheckOptions::default()).unwrap();
        assert!((r.max_rel_error - 2.0).abs() < 1e-6);
        assert_eq!(r.worst.as_ref().map(|w| w.0.as_str()), Some("w"));
    }

    #[test]
    fn sampling_limits_checked_entries() {
        let p = store((0..50).map(|i| i as f64 * 0.01).collect());
        let r = grad_check(
            &p,
            cubic(1.0),
            GradCheckOptions {
                per_tensor: Some(7),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.checked, 7);
    }
}
