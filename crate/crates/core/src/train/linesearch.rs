use serde::{Deserialize, Serialize};

/// Armijo backtracking parameters for gradient ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backtracking {
    pub init_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_steps: usize,
}

impl Default for Backtracking {
    fn default() -> Self {
        Self {
            init_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub step: f64,
    /// Candidate step sizes evaluated.
    pub trials: usize,
    pub accepted: bool,
}

/// One ascent step along `grad` from `x`, shrinking the step until
/// `f(x + t g) >= f(x) + armijo * t * |g|^2`.
///
/// A zero gradient evaluates nothing. When every trial fails, `x` is returned
/// unchanged so the objective never decreases.
pub fn backtracking_ascent<F>(
    x: &[f64],
    fx: f64,
    grad: &[f64],
    mut f: F,
    params: &Backtracking,
) -> StepOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let g2: f64 = grad.iter().map(|g| g * g).sum();
    let unchanged = |trials| StepOutcome {
        x: x.to_vec(),
        value: fx,
        step: 0.0,
        trials,
        accepted: false,
    };
    if g2 == 0.0 || !g2.is_finite() {
        return unchanged(0);
    }
    let mut t = params.init_step;
    let mut cand = vec![0.0; x.len()];
    for trial in 1..=params.max_steps {
        for ((c, &xi), &gi) in cand.iter_mut().zip(x).zip(grad) {
            *c = xi + t * gi;
        }
        let v = f(&cand);
        if v.is_finite() && v >= fx + params.armijo * t * g2 && v >= fx {
            return StepOutcome {
                x: cand,
                value: v,
                step: t,
                trials: trial,
                accepted: true,
            };
        }
        t *= params.shrink;
    }
    unchanged(params.max_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_shrinks_until_armijo_holds() {
        // f(x) = -2x^2 at x = 1: g = -4, |g|^2 = 16
        // t=1    -> x=-3, f=-18  < -2 + 1e-4*16      reject
        // t=0.5  -> x=-1, f=-2   < -2 + 0.5e-4*16    reject
        // t=0.25 -> x= 0, f=0   >= -2 + 0.25e-4*16   accept
        let f = |x: &[f64]| -2.0 * x[0] * x[0];
        let out = backtracking_ascent(&[1.0], -2.0, &[-4.0], f, &Backtracking::default());
        assert!(out.accepted);
        assert_eq!(out.trials, 3);
        assert_eq!(out.step, 0.25);
        assert_eq!(out.x, vec![0.0]);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let out = backtracking_ascent(
            &[1.0, 2.0],
            5.0,
            &[0.0, 0.0],
            |_| panic!("evaluated"),
            &Backtracking::default(),
        );
        assert!(!out.accepted);
        assert_eq!(out.trials, 0);
        assert_eq!(out.x, vec![1.0, 2.0]);
    }

    #[test]
    fn exhausted_search_keeps_the_point() {
        // pretend the gradient points downhill
        let f = |x: &[f64]| -x[0] * x[0];
        let params = Backtracking {
            max_steps: 5,
            ..Backtracking::default()
        };
        let out = backtracking_ascent(&[1.0], -1.0, &[1.0], f, &params);
        assert!(!out.accepted);
        assert_eq!(out.trials, 5);
        assert_eq!(out.x, vec![1.0]);
        assert_eq!(out.value, -1.0);
    }

    #[test]
    fn non_finite_candidates_are_rejected() {
        let f = |x: &[f64]| {
            if x[0] > 1.5 {
                f64::NAN
            } else {
                -(x[0] - 1.0).powi(2)
            }
        };
        let out = backtracking_ascent(&[0.0], -1.0, &[2.0], f, &Backtracking::default());
        assert!(out.accepted);
        assert_eq!(out.step, 0.5);
        assert_eq!(out.x, vec![1.0]);
    }
}
