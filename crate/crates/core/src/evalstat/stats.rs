//! Classical tests used to compare strategies.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n − 1 denominator).
fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_groups(groups: &[Vec<f64>], min_size: usize) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 groups, got {}", groups.len())));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < min_size {
            return Err(Error::Invalid(format!("group {i} has {} samples, need {min_size}", g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("group {i}")));
        }
    }
    Ok(())
}

fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    let dist = FisherSnedecor::new(d1, d2).expect("positive degrees of freedom");
    dist.sf(f).clamp(0.0, 1.0)
}

fn chi2_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(k).expect("positive degrees of freedom").sf(x).clamp(0.0, 1.0)
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * d.sf(t.abs())).clamp(0.0, 1.0)
}

fn z_two_sided(z: f64) -> f64 {
    (2.0 * Normal::standard().sf(z.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df1: f64,
    pub df2: f64,
}

/// One-way ANOVA.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult> {
    check_groups(groups, 2)?;
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let (d1, d2) = ((k - 1) as f64, (n - k) as f64);
    if d2 <= 0.0 {
        return Err(Error::Invalid("ANOVA needs more observations than groups".into()));
    }
    if ssw == 0.0 {
        return Err(Error::Invalid("ANOVA is undefined with zero within-group variance".into()));
    }
    let f = (ssb / d1) / (ssw / d2);
    Ok(TestResult {
        statistic: f,
        p_value: f_sf(f, d1, d2),
        df1: d1,
        df2: d2,
    })
}

/// Average ranks (1-based) of the pooled sample, plus `Σ(t³ − t)` over tie
/// groups.
fn rank(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

/// Kruskal-Wallis H with tie correction; chi-square p-value.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    check_groups(groups, 1)?;
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = rank(&pooled);
    let mut h = 0.0;
    let mut off = 0;
    for g in groups {
        let r: f64 = ranks[off..off + g.len()].iter().sum();
        h += r * r / g.len() as f64;
        off += g.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let c = 1.0 - ties / (n * n * n - n);
    if c <= 0.0 {
        return Err(Error::Invalid("Kruskal-Wallis is undefined when all observations are tied".into()));
    }
    let h = (h / c).max(0.0);
    let df = (groups.len() - 1) as f64;
    Ok(TestResult {
        statistic: h,
        p_value: chi2_sf(h, df),
        df1: df,
        df2: 0.0,
    })
}

/// Levene's test on absolute deviations from group medians
/// (Brown-Forsythe).
pub fn levene(groups: &[Vec<f64>]) -> Result<TestResult> {
    check_groups(groups, 2)?;
    let dev: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    match anova_oneway(&dev) {
        Ok(r) => Ok(r),
        // Every group has zero spread around its median: the variances are
        // all equal.
        Err(_) if dev.iter().flatten().all(|&v| v == 0.0) => Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            df1: (groups.len() - 1) as f64,
            df2: (dev.iter().map(|g| g.len()).sum::<usize>() - groups.len()) as f64,
        }),
        Err(e) => Err(e),
    }
}

/// Small-sample correction `J = 1 − 3 / (4(n₁ + n₂) − 9)`.
pub fn hedges_correction(n1: usize, n2: usize) -> f64 {
    1.0 - 3.0 / (4.0 * (n1 + n2) as f64 - 9.0)
}

/// Hedges' g of `a` relative to `b` (positive when `a` has the larger mean).
pub fn hedges_g(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid("Hedges' g needs at least 2 samples per group".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let diff = mean(a) - mean(b);
    if diff == 0.0 {
        return Ok(0.0);
    }
    let pooled = (((n1 - 1.0) * var(a) + (n2 - 1.0) * var(b)) / (n1 + n2 - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(Error::Invalid("Hedges' g is undefined for two constant samples with different means".into()));
    }
    Ok(diff / pooled * hedges_correction(a.len(), b.len()))
}

/// Welch's two-sample t test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid("Welch t needs at least 2 samples per group".into()));
    }
    let (va, vb) = (var(a) / a.len() as f64, var(b) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = if mean(a) == mean(b) { 1.0 } else { 0.0 };
        return Ok(TestResult {
            statistic: 0.0,
            p_value: p,
            df1: f64::NAN,
            df2: 0.0,
        });
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    Ok(TestResult {
        statistic: t,
        p_value: t_two_sided(t, df),
        df1: df,
        df2: 0.0,
    })
}

/// Mann-Whitney U (statistic for `a`), normal approximation with tie and
/// continuity corrections, two-sided.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("Mann-Whitney needs nonempty samples".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = rank(&pooled);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let n = n1 + n2;
    let sigma = (n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))).sqrt();
    let p = if sigma == 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / sigma;
        z_two_sided(z)
    };
    Ok(TestResult {
        statistic: u,
        p_value: p,
        df1: 0.0,
        df2: 0.0,
    })
}

/// Holm step-down adjustment; returned in the input order.
pub fn holm(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (k, &i) in idx.iter().enumerate() {
        running = running.max(((m - k) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    out
}

/// Box-Cox profile log-likelihood.
pub fn box_cox_llf(x: &[f64], lambda: f64) -> f64 {
    let n = x.len() as f64;
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = if lambda == 0.0 {
        logs.clone()
    } else {
        x.iter().map(|v| (v.powf(lambda) - 1.0) / lambda).collect()
    };
    let m = mean(&y);
    let s2 = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (lambda - 1.0) * logs.iter().sum::<f64>() - n / 2.0 * s2.ln()
}

/// `x^λ − 1`, or `ln x` at `λ = 0`.
pub fn box_cox_apply(x: &[f64], lambda: f64) -> Vec<f64> {
    if lambda == 0.0 {
        x.iter().map(|v| v.ln()).collect()
    } else {
        x.iter().map(|v| v.powf(lambda) - 1.0).collect()
    }
}

/// Transform `x`, estimating `λ` by golden-section search on `[−5, 5]` when
/// not given.
pub fn box_cox(x: &[f64], lambda: Option<f64>) -> Result<(Vec<f64>, f64)> {
    if x.is_empty() {
        return Err(Error::Invalid("Box-Cox of an empty sample".into()));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Invalid(format!("Box-Cox needs positive values; element {i} is {}", x[i])));
    }
    let lambda = match lambda {
        Some(l) => l,
        None => {
            if x.len() < 2 || x.iter().all(|&v| v == x[0]) {
                return Err(Error::Invalid("Box-Cox λ is undefined for a constant sample".into()));
            }
            golden_max(|l| box_cox_llf(x, l), -5.0, 5.0, 1e-10)
        }
    };
    Ok((box_cox_apply(x, lambda), lambda))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textbook() -> Vec<Vec<f64>> {
        vec![
            vec![6.0, 8.0, 4.0, 5.0, 3.0, 4.0],
            vec![8.0, 12.0, 9.0, 11.0, 6.0, 8.0],
            vec![13.0, 9.0, 11.0, 8.0, 7.0, 12.0],
        ]
    }

    #[test]
    fn anova_matches_hand_decomposition() {
        // Means 5, 9, 10; grand mean 8. SSB = 6(9 + 1 + 4) = 84,
        // SSW = 16 + 24 + 28 = 68, F = (84/2) / (68/15).
        let r = anova_oneway(&textbook()).unwrap();
        assert!((r.statistic - 42.0 / (68.0 / 15.0)).abs() < 1e-10);
        assert!((r.p_value - 0.0023987773293929083).abs() < 1e-9);
        assert_eq!((r.df1, r.df2), (2.0, 15.0));
    }

    #[test]
    fn anova_of_equal_means_is_zero() {
        let r = anova_oneway(&[vec![1.0, 3.0], vec![0.0, 4.0], vec![2.0, 2.5, 1.5]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn two_group_anova_is_squared_pooled_t() {
        let a = [1.2, 3.4, 2.2, 5.1, 0.3];
        let b = [4.4, 6.1, 3.9, 7.7];
        let f = anova_oneway(&[a.to_vec(), b.to_vec()]).unwrap().statistic;
        let (n1, n2) = (a.len() as f64, b.len() as f64);
        let sp = ((n1 - 1.0) * var(&a) + (n2 - 1.0) * var(&b)) / (n1 + n2 - 2.0);
        let t = (mean(&a) - mean(&b)) / (sp * (1.0 / n1 + 1.0 / n2)).sqrt();
        assert!((f - t * t).abs() < 1e-10 * f);
    }

    #[test]
    fn kruskal_matches_hand_ranking() {
        // Pooled ranks with ties averaged; group rank sums 25, 68, 78.
        let r = kruskal_wallis(&textbook()).unwrap();
        let (ranks, ties) = rank(&textbook().concat());
        let sums: Vec<f64> = ranks.chunks(6).map(|c| c.iter().sum()).collect();
        assert_eq!(sums, vec![25.0, 68.0, 78.0]);
        let h = 12.0 / (18.0 * 19.0) * (25.0f64.powi(2) + 68.0f64.powi(2) + 78.0f64.powi(2)) / 6.0 - 3.0 * 19.0;
        let h = h / (1.0 - ties / (18.0f64.powi(3) - 18.0));
        assert!((r.statistic - h).abs() < 1e-10);
        assert!((r.statistic - 9.420684835779168).abs() < 1e-10);
        assert!((r.p_value - 0.009001694713345491).abs() < 1e-9);
    }

    #[test]
    fn levene_brown_forsythe() {
        let r = levene(&textbook()).unwrap();
        assert!((r.statistic - 0.5084745762711866).abs() < 1e-10);
        assert!((r.p_value - 0.61141482716892).abs() < 1e-9);
        let same = vec![vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 4.0]];
        assert!(levene(&same).unwrap().p_value > 0.99);
        assert_eq!(kruskal_wallis(&same).unwrap().statistic, 0.0);
    }

    #[test]
    fn hedges_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(hedges_g(&a, &a).unwrap(), 0.0);
        // Equal sample sd s, mean gap s: Cohen's d = 1.
        let b: Vec<f64> = a.iter().map(|v| v + var(&a).sqrt()).collect();
        let g = hedges_g(&b, &a).unwrap();
        assert!((g - hedges_correction(4, 4)).abs() < 1e-12);
        assert!((hedges_correction(4, 4) - (1.0 - 3.0 / 23.0)).abs() < 1e-15);
        assert_eq!(hedges_g(&a, &b).unwrap(), -g);
    }

    #[test]
    fn pairwise_tests_match_reference_values() {
        let g = textbook();
        let w = welch_t(&g[0], &g[1]).unwrap();
        assert!((w.statistic + 3.464101615137755).abs() < 1e-12);
        assert!((w.df1 - 9.615384615384615).abs() < 1e-12);
        assert!((w.p_value - 0.006443866163955325).abs() < 1e-9);
        assert!((welch_t(&g[1], &g[2]).unwrap().p_value - 0.4651510397534957).abs() < 1e-9);
        let m = mann_whitney(&g[0], &g[1]).unwrap();
        assert_eq!(m.statistic, 2.5);
        assert!((m.p_value - 0.015202415878109048).abs() < 1e-9);
        assert!((mann_whitney(&g[1], &g[2]).unwrap().p_value - 0.5166629409488652).abs() < 1e-9);
    }

    #[test]
    fn distribution_tails_match_tables() {
        assert!((f_sf(3.5, 2.0, 15.0) - 0.05656064283480739).abs() < 1e-12);
        assert!((chi2_sf(5.0, 3.0) - 0.1717971442967335).abs() < 1e-12);
        assert!((t_two_sided(2.1, 7.3) - 0.07224671342485328).abs() < 1e-10);
    }

    #[test]
    fn holm_adjustment() {
        let adj = holm(&[0.01, 0.04, 0.03, 0.5]);
        assert_eq!(adj, vec![0.04, 0.09, 0.09, 0.5]);
    }

    #[test]
    fn box_cox_special_cases() {
        let x = [0.5, 1.0, 2.0, 4.0];
        let (y, l) = box_cox(&x, Some(0.0)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(y, x.iter().map(|v| v.ln()).collect::<Vec<_>>());
        let (y, _) = box_cox(&x, Some(1.0)).unwrap();
        assert_eq!(y, vec![-0.5, 0.0, 1.0, 3.0]);
        assert!(box_cox(&[1.0, 0.0], None).is_err());
    }

    #[test]
    fn box_cox_lambda_matches_reference() {
        let x = [2.1, 3.4, 1.9, 5.6, 4.4, 2.8, 3.3, 7.9, 1.2, 2.5];
        let (_, l) = box_cox(&x, None).unwrap();
        assert!((l + 0.06864868947395299).abs() < 1e-6, "{l}");
        assert!((box_cox_llf(&x, 0.5) + 5.1684361456486165).abs() < 1e-12);
    }
}
