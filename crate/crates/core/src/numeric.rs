//! Small numerical toolkit shared by the analytic modules: adaptive quadrature,
//! thin wrappers over special functions, and empirical-distribution distances
//! used by the self-check oracles.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

/// Absolute tolerance used by [`integrate`] when callers do not override it.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The interval is pre-split into a fixed number of panels before adaptive
/// refinement so that narrow interior features cannot hide between the first
/// few sample points of a long domain; each panel then recurses with a depth
/// cap generous enough for the smooth densities used here.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    const INITIAL_PANELS: usize = 32;
    let width = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    let mut total = 0.0;
    for i in 0..INITIAL_PANELS {
        let lo = a + i as f64 * width;
        let hi = if i == INITIAL_PANELS - 1 { b } else { lo + width };
        let flo = f(lo);
        let fhi = f(hi);
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        total += simpson_recurse(
            f,
            lo,
            hi,
            flo,
            fmid,
            fhi,
            simpson(lo, hi, flo, fmid, fhi),
            panel_tol,
            40,
        );
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Natural log of the binomial coefficient `C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial coefficient as `f64`; exact while the result stays below 2^53.
pub fn choose(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(a, b, x)
    }
}

/// Poisson pmf `P[N = k]` for mean `lambda >= 0`.
pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)).exp()
}

/// Binomial pmf `P[N = k]` for `N ~ Bin(n, p)`.
pub fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// A discrete distribution over `u64` support, truncated so that the retained
/// mass exceeds `1 - tail_mass_bound`. Terms are enumerated in increasing
/// support order starting from the mode-containing head of the distribution.
#[derive(Debug, Clone)]
pub struct TruncatedCounts {
    /// `(value, probability)` pairs in increasing value order.
    pub terms: Vec<(u64, f64)>,
}

/// Mass allowed to be dropped when truncating count mixtures.
pub const COUNT_TAIL_BOUND: f64 = 1e-9;

impl TruncatedCounts {
    /// Truncated `Poisson(lambda)`.
    pub fn poisson(lambda: f64) -> Self {
        assert!(lambda >= 0.0, "Poisson mean must be nonnegative");
        let mut terms = Vec::new();
        let mut cum = 0.0;
        let mut k = 0u64;
        // Upper guard: well past the mean plus many standard deviations.
        let hard_cap = (lambda + 12.0 * lambda.sqrt() + 40.0).ceil() as u64;
        while cum < 1.0 - COUNT_TAIL_BOUND && k <= hard_cap {
            let p = poisson_pmf(lambda, k);
            terms.push((k, p));
            cum += p;
            k += 1;
        }
        TruncatedCounts { terms }
    }

    /// Truncated `Binomial(n, p)`.
    pub fn binomial(n: u64, p: f64) -> Self {
        let mut terms = Vec::new();
        let mut cum = 0.0;
        // Walk outward from the mode so the loop exits quickly for peaked laws.
        let mode = ((n as f64 + 1.0) * p).floor().min(n as f64) as u64;
        let mut lo = mode;
        let mut hi = mode;
        let push = |k: u64, cum: &mut f64, terms: &mut Vec<(u64, f64)>| {
            let q = binomial_pmf(n, p, k);
            terms.push((k, q));
            *cum += q;
        };
        push(mode, &mut cum, &mut terms);
        while cum < 1.0 - COUNT_TAIL_BOUND && (lo > 0 || hi < n) {
            if lo > 0 {
                lo -= 1;
                push(lo, &mut cum, &mut terms);
            }
            if cum >= 1.0 - COUNT_TAIL_BOUND {
                break;
            }
            if hi < n {
                hi += 1;
                push(hi, &mut cum, &mut terms);
            }
        }
        terms.sort_by_key(|&(k, _)| k);
        TruncatedCounts { terms }
    }

    /// A point mass at `k`.
    pub fn fixed(k: u64) -> Self {
        TruncatedCounts { terms: vec![(k, 1.0)] }
    }

    /// Total retained mass.
    pub fn mass(&self) -> f64 {
        self.terms.iter().map(|&(_, p)| p).sum()
    }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous cdf.
///
/// `samples` is sorted in place; `cdf` must be the analytic cdf under test.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN sample in KS input"));
    let n = samples.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i + 1) as f64 / n - f).abs();
        sup = sup.max(lo).max(hi);
    }
    sup
}

/// Total-variation distance between two discrete distributions given as
/// `(value, probability)` maps over a shared integer support.
pub fn tv_distance(p: &[(u64, f64)], q: &[(u64, f64)]) -> f64 {
    use std::collections::BTreeMap;
    let mut support: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &(k, v) in p {
        support.entry(k).or_insert((0.0, 0.0)).0 += v;
    }
    for &(k, v) in q {
        support.entry(k).or_insert((0.0, 0.0)).1 += v;
    }
    0.5 * support.values().map(|&(a, b)| (a - b).abs()).sum::<f64>()
}

/// Ordinary least squares fit of `y = a + b * x`; returns `(a, b, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let e = v - (a + b * u);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (a, b, r2)
}
