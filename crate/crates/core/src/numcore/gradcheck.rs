//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever runs forward passes, so it shares no code
//! with the backward rules it verifies. Coordinates where any stencil
//! point flips a ReLU mask or a maxpool argmax are skipped: the function
//! is not differentiable within the step there.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (all if `None`).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    pub stencil: Stencil,
    /// Test hook: perturb one analytic gradient entry before comparing.
    pub corrupt_analytic: bool,
}

/// Central difference stencil. The five-point rule has O(h⁴) truncation
/// error and costs twice the forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    ThreePoint,
    FivePoint,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-3,
            max_coords_per_param: None,
            seed: 0,
            stencil: Stencil::FivePoint,
            corrupt_analytic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(params: &ParamSet, forward: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    Ok((tape.value(loss).get(0, 0), tape.kink_signature()))
}

/// Compares reverse-mode gradients of `forward` (which must return a 1×1
/// loss) against central differences for every parameter in `params`.
///
/// On return `params` holds the analytic gradients of one backward pass.
pub fn check_gradients<F>(
    params: &mut ParamSet,
    forward: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    let base_sig = tape.kink_signature();
    tape.backward(loss, params)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut probe = params.clone();
    let ids: Vec<_> = params.ids().collect();
    let mut corrupted = !cfg.corrupt_analytic;

    for id in ids {
        let n = params.get(id).len();
        let coords: Vec<usize> = match cfg.max_coords_per_param {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = probe.get(id).values[i];
            let mut f = |offset: f64| -> Result<(f64, u64)> {
                probe.get_mut(id).values[i] = orig + offset;
                let r = evaluate(&probe, &forward);
                probe.get_mut(id).values[i] = orig;
                r
            };
            let h = cfg.step;
            let offsets: &[f64] = match cfg.stencil {
                Stencil::ThreePoint => &[1.0, -1.0],
                Stencil::FivePoint => &[1.0, -1.0, 2.0, -2.0],
            };
            let mut values = [0.0; 4];
            let mut kinked = false;
            for (k, &o) in offsets.iter().enumerate() {
                let (v, sig) = f(o * h)?;
                values[k] = v;
                kinked |= sig != base_sig;
            }
            if kinked {
                report.skipped += 1;
                continue;
            }
            let numeric = match cfg.stencil {
                Stencil::ThreePoint => (values[0] - values[1]) / (2.0 * h),
                Stencil::FivePoint => {
                    (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * h)
                }
            };
            let mut analytic = params.get(id).grad[i];
            if !corrupted {
                analytic += 0.1 * (1.0 + analytic.abs());
                corrupted = true;
            }
            let err = relative_error(analytic, numeric, cfg.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Parameter, TokenMatrix};

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-3), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let mut ps = ParamSet::new();
        ps.push(Parameter::new("x", vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap());
        let f = |t: &mut Tape, p: &ParamSet| {
            let x = t.param(p, crate::numcore::ParamId(0));
            let xt = t.transpose(x);
            t.matmul(x, xt)
        };
        let rep = check_gradients(&mut ps, f, &GradCheckConfig::default()).unwrap();
        assert!(rep.passes(1e-6), "{rep:?}");
        assert_eq!(ps.get(crate::numcore::ParamId(0)).grad, vec![0.6, -2.4, 4.0]);

        let cfg = GradCheckConfig {
            corrupt_analytic: true,
            ..Default::default()
        };
        let rep = check_gradients(&mut ps, f, &cfg).unwrap();
        assert!(!rep.passes(1e-4));
        assert_eq!(rep.worst, Some(("x".into(), 0)));
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let mut ps = ParamSet::new();
        ps.push(Parameter::new("x", vec![1, 2], vec![1e-7, 1.0]).unwrap());
        let w = TokenMatrix::from_rows(&[[1.0, 1.0]]);
        let f = move |t: &mut Tape, p: &ParamSet| {
            let x = t.param(p, crate::numcore::ParamId(0));
            let r = t.relu(x);
            t.dot_const(r, &w)
        };
        let rep = check_gradients(&mut ps, f, &GradCheckConfig::default()).unwrap();
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.checked, 1);
    }
}
