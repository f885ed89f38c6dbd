//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::tensor::Tensor;
use super::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check a random subset of this many coordinates; `None` checks all.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            max_coords: Some(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Denominator floor: below it agreement is judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` (one tensor per parameter, in `module.params()` order)
/// against central differences of `objective`.
pub fn grad_check<M, F, R>(
    module: &mut M,
    objective: F,
    analytic: &[Tensor],
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    M: Parameterized,
    F: Fn(&M) -> f64,
    R: Rng + ?Sized,
{
    let sizes: Vec<usize> = module.params().iter().map(|p| p.len()).collect();
    assert_eq!(sizes.len(), analytic.len(), "one analytic tensor per parameter");
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = match cfg.max_coords {
        Some(n) if n < total => {
            let mut v = sample(rng, total, n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let locate = |mut flat: usize| {
        for (i, s) in sizes.iter().enumerate() {
            if flat < *s {
                return (i, flat);
            }
            flat -= s;
        }
        unreachable!("coordinate out of range")
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    for flat in coords {
        let (pi, ci) = locate(flat);
        let orig = module.params()[pi].data()[ci];
        module.params_mut()[pi].data_mut()[ci] = orig + cfg.step;
        let up = objective(module);
        module.params_mut()[pi].data_mut()[ci] = orig - cfg.step;
        let down = objective(module);
        module.params_mut()[pi].data_mut()[ci] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let err = relative_error(analytic[pi].data()[ci], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((pi, ci));
        }
    }
    report
}
