//! Special functions backing the chi-squared upper-tail probability.
//!
//! The p-value path is self-contained: a Lanczos log-gamma plus the
//! regularized incomplete gamma, evaluated by power series for small
//! arguments and by continued fraction otherwise. Relative error is
//! driven well below 1e-10 over the degrees-of-freedom range used here.

/// Convergence threshold for the series / continued-fraction loops.
const EPS: f64 = 1e-15;
/// Iteration cap; both expansions converge long before this for the
/// argument ranges produced by contingency tables.
const MAX_ITER: usize = 2000;
const FPMIN: f64 = f64::MIN_POSITIVE / EPS;

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires a positive argument, got {x}");
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma function Q(a, x) = Γ(a, x) / Γ(a).
///
/// Power series for the lower function when `x < a + 1`, Lentz continued
/// fraction for the upper function otherwise.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape parameter must be positive, got {a}");
    assert!(x >= 0.0, "argument must be nonnegative, got {x}");
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_continued_fraction(a, x)
    }
}

/// Lower regularized incomplete gamma P(a, x) by its power series.
fn lower_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    sum * log_prefix.exp()
}

/// Upper regularized incomplete gamma Q(a, x) by modified Lentz.
fn upper_continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    h * log_prefix.exp()
}

/// Upper-tail probability of the chi-squared distribution with `dof`
/// degrees of freedom: P(X >= chi2).
pub fn chi2_survival(chi2: f64, dof: u64) -> f64 {
    assert!(dof >= 1, "degrees of freedom must be at least 1");
    assert!(chi2 >= 0.0, "chi-squared statistic must be nonnegative");
    regularized_gamma_q(dof as f64 / 2.0, chi2 / 2.0)
}
