//! Unpaired Student's t-test and one-way ANOVA.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least two groups")]
    TooFewGroups,
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sum of squared deviations from the mean.
fn sum_sq_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Unbiased sample standard deviation; `None` below two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    (xs.len() >= 2).then(|| (sum_sq_dev(xs) / (xs.len() - 1) as f64).sqrt())
}

/// Pooled-variance two-sample t-test.
pub fn student_t_test(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewSamples { need: 2, got: s.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = (sum_sq_dev(a) + sum_sq_dev(b)) / df;
    let diff = mean(a) - mean(b);
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest { t: f64::INFINITY.copysign(diff), df, p: 0.0 }
        });
    }
    let t = diff / se;
    Ok(TTest { t, df, p: t_two_sided_p(t, df) })
}

pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<Anova, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups);
    }
    if let Some(g) = groups.iter().find(|g| g.is_empty()) {
        return Err(StatsError::TooFewSamples { need: 1, got: g.len() });
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    if n <= k {
        return Err(StatsError::TooFewSamples { need: k + 1, got: n });
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ss_between: f64 = groups
        .iter()
        .map(|g| {
            let d = mean(g) - grand;
            g.len() as f64 * d * d
        })
        .sum();
    let ss_within: f64 = groups.iter().map(|g| sum_sq_dev(g)).sum();
    let (df_between, df_within) = (k - 1, n - k);
    let f = if ss_within == 0.0 {
        if ss_between == 0.0 {
            return Err(StatsError::Degenerate("all groups are the same constant"));
        }
        f64::INFINITY
    } else {
        (ss_between / df_between as f64) / (ss_within / df_within as f64)
    };
    Ok(Anova { f, df_between, df_within })
}

fn t_density_scale(df: f64) -> f64 {
    (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt()
}

/// Two-sided tail probability of Student's t, by adaptive quadrature of the density.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let t = t.abs();
    if t.is_infinite() {
        return 0.0;
    }
    let c = t_density_scale(df);
    let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    // Upper tail from 1 to infinity, mapped onto (0, 1] with x = 1/u.
    let mapped = |u: f64| {
        if u == 0.0 {
            // Limit of the mapped density; nonzero only for the Cauchy case.
            if df == 1.0 { c } else { 0.0 }
        } else {
            pdf(1.0 / u) / (u * u)
        }
    };
    let upper = if t <= 1.0 {
        0.5 - integrate(pdf, 0.0, t)
    } else {
        integrate(mapped, 0.0, 1.0 / t)
    };
    (2.0 * upper).clamp(0.0, 1.0)
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    // Coarse pass to set a tolerance relative to the integral's magnitude.
    let rough = step(&f, a, b, fa, fm, fb, whole, whole.abs().max(f64::MIN_POSITIVE) * 1e-6, 20);
    let tol = (rough.abs() * 1e-13).max(1e-300);
    step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = student_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(r.df, 6.0);
    }

    #[test]
    fn shifted_samples_are_significant() {
        let r = student_t_test(&[1.0, 2.0, 3.0], &[11.0, 12.0, 13.0]).unwrap();
        // t = -10 / sqrt(1 * (2/3)) with df = 4.
        assert!((r.t + 10.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(r.p < 0.001);
    }

    #[test]
    fn swap_negates_t() {
        let a = [1.0, 4.0, 2.5, 3.0];
        let b = [2.0, 5.0, 6.5];
        let ab = student_t_test(&a, &b).unwrap();
        let ba = student_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn zero_variance_cases() {
        let r = student_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = student_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(r.t, f64::NEG_INFINITY);
        assert_eq!(r.p, 0.0);
        assert!(student_t_test(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn p_value_reference_points() {
        // t = 0 has p = 1; the Cauchy case (df = 1) has p = 1 - 2 atan(t) / pi.
        assert!((t_two_sided_p(0.0, 5.0) - 1.0).abs() < 1e-13);
        for t in [0.3, 1.0, 2.5, 40.0] {
            let cauchy = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((t_two_sided_p(t, 1.0) - cauchy).abs() < 1e-12, "t = {t}");
        }
        // df = 2 has the closed form p = 1 - t / sqrt(2 + t^2).
        for t in [0.5, 3.0, 12.0] {
            let exact = 1.0 - t / (2.0f64 + t * t).sqrt();
            assert!((t_two_sided_p(t, 2.0) - exact).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn anova_df_and_errors() {
        let groups: Vec<Vec<f64>> = [52, 51, 51, 51, 51, 52]
            .iter()
            .enumerate()
            .map(|(i, &n)| (0..n).map(|j| (i * 7 + j % 5) as f64).collect())
            .collect();
        let r = one_way_anova(&groups).unwrap();
        assert_eq!((r.df_between, r.df_within), (5, 302));
        assert!(matches!(one_way_anova(&[vec![3.0, 3.0], vec![3.0]]), Err(StatsError::Degenerate(_))));
        assert_eq!(one_way_anova(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap().f, f64::INFINITY);
        assert_eq!(one_way_anova(&[vec![1.0]]), Err(StatsError::TooFewGroups));
        assert!(one_way_anova(&[vec![1.0], vec![2.0]]).is_err());
    }
}
