//! Cross-checks of the statistics implementations against independent
//! oracles: a quadrature-based chi-squared tail, a brute-force chi-squared
//! statistic, and a naive recursive edit distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dqc_core::numeric::chi2_survival;
use dqc_core::taxonomy::edit_distance;
use dqc_core::validity::{chi2_homogeneity, cramers_v};

/// Exact gamma for half-integer arguments via factorials:
/// gamma(m) = (m-1)!, gamma(m + 1/2) = (2m)! sqrt(pi) / (4^m m!).
fn gamma_half_integer(two_a: u64) -> f64 {
    if two_a % 2 == 0 {
        let m = two_a / 2;
        (1..m).map(|k| k as f64).product()
    } else {
        let m = (two_a - 1) / 2;
        let mut value = std::f64::consts::PI.sqrt();
        for k in 0..m {
            value *= k as f64 + 0.5;
        }
        value
    }
}

/// Chi-squared density at t for `dof` degrees of freedom, using the
/// factorial-based gamma (independent of the library's Lanczos).
fn chi2_pdf(t: f64, dof: u64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let a = dof as f64 / 2.0;
    (t / 2.0).powf(a - 1.0) * (-t / 2.0).exp() / (2.0 * gamma_half_integer(dof))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let whole = simpson(f, a, b);
    let mid = 0.5 * (a + b);
    let left = simpson(f, a, mid);
    let right = simpson(f, mid, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        left + right + (left + right - whole) / 15.0
    } else {
        adaptive_simpson(f, a, mid, tol / 2.0, depth - 1)
            + adaptive_simpson(f, mid, b, tol / 2.0, depth - 1)
    }
}

/// Upper-tail chi-squared probability by numerical integration. Small
/// statistics integrate the lower tail and subtract; large ones integrate
/// the upper tail out to where the density vanishes. The dof=1 density
/// has an integrable singularity at zero, removed by substituting
/// t = u^2 (the transformed integrand is smooth).
pub fn chi2_tail_by_quadrature(chi2: f64, dof: u64) -> f64 {
    if chi2 <= 0.0 {
        return 1.0;
    }
    let pdf = move |t: f64| chi2_pdf(t, dof);
    let mean = dof as f64;
    let spread = (2.0 * dof as f64).sqrt();
    if chi2 < mean {
        if dof == 1 {
            let g = move |u: f64| {
                2.0f64.sqrt() * (-u * u / 2.0).exp() / gamma_half_integer(1)
            };
            return 1.0 - adaptive_simpson(&g, 0.0, chi2.sqrt(), 1e-13, 40);
        }
        1.0 - adaptive_simpson(&pdf, 0.0, chi2, 1e-13, 40)
    } else {
        let mut upper = chi2 + 20.0 * spread + 60.0;
        while chi2_pdf(upper, dof) > 1e-320 {
            upper += 40.0;
        }
        adaptive_simpson(&pdf, chi2, upper, 1e-13, 40)
    }
}

#[test]
fn survival_matches_quadrature_on_the_dof_grid() {
    let statistics = [
        0.01, 0.1, 0.5, 1.0, 2.0, 3.841, 5.0, 8.0, 13.0, 21.0, 34.0, 55.0, 89.0, 144.0, 200.0,
    ];
    for dof in 1..=40u64 {
        for &chi2 in &statistics {
            let ours = chi2_survival(chi2, dof);
            let oracle = chi2_tail_by_quadrature(chi2, dof);
            assert!(
                (ours - oracle).abs() <= 1e-8,
                "dof={dof} chi2={chi2}: {ours} vs {oracle}"
            );
        }
    }
}

#[test]
fn survival_matches_quadrature_on_random_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..300 {
        let dof = rng.gen_range(1..=40u64);
        let chi2 = rng.gen_range(0.0..200.0f64);
        let ours = chi2_survival(chi2, dof);
        let oracle = chi2_tail_by_quadrature(chi2, dof);
        assert!(
            (ours - oracle).abs() <= 1e-8,
            "dof={dof} chi2={chi2}: {ours} vs {oracle}"
        );
    }
}

/// Direct-definition chi-squared on a table: expected counts and the sum
/// of squared deviations, no column dropping (caller supplies dense
/// tables).
fn brute_force_chi2(table: &[Vec<u64>]) -> (f64, u64, u64) {
    let rows = table.len();
    let cols = table[0].len();
    let mut row_totals = vec![0u64; rows];
    let mut col_totals = vec![0u64; cols];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            row_totals[i] += c;
            col_totals[j] += c;
        }
    }
    let n: u64 = row_totals.iter().sum();
    let mut chi2 = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let e = row_totals[i] as f64 * col_totals[j] as f64 / n as f64;
            let o = table[i][j] as f64;
            chi2 += (o - e) * (o - e) / e;
        }
    }
    (chi2, ((rows - 1) * (cols - 1)) as u64, n)
}

#[test]
fn homogeneity_matches_brute_force_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..500 {
        let rows = rng.gen_range(2..=5usize);
        let cols = rng.gen_range(2..=8usize);
        // draw strictly positive cells so no dropping happens
        let table: Vec<Vec<u64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(1..60u64)).collect())
            .collect();
        let ours = chi2_homogeneity(&table).unwrap();
        let (chi2, dof, n) = brute_force_chi2(&table);
        let rel = if chi2 == 0.0 {
            (ours.chi2 - chi2).abs()
        } else {
            ((ours.chi2 - chi2) / chi2).abs()
        };
        assert!(rel <= 1e-9, "chi2 {} vs {}", ours.chi2, chi2);
        assert_eq!(ours.dof, dof);
        assert_eq!(ours.n, n);
        let v = cramers_v(chi2, n, rows, cols);
        assert!((ours.cramers_v - v).abs() <= 1e-12);
        assert!((0.0..=1.0 + 1e-9).contains(&ours.cramers_v));
    }
}

/// Naive exponential-time edit distance, memo-free, for small strings.
fn naive_edit_distance(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub_cost = usize::from(a[0] != b[0]);
    let keep = naive_edit_distance(&a[1..], &b[1..]) + sub_cost;
    let del = naive_edit_distance(&a[1..], b) + 1;
    let ins = naive_edit_distance(a, &b[1..]) + 1;
    keep.min(del).min(ins)
}

#[test]
fn edit_distance_matches_naive_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet: Vec<char> = "abcde ".chars().collect();
    for _ in 0..200 {
        let len_a = rng.gen_range(0..=8usize);
        let len_b = rng.gen_range(0..=8usize);
        let a: String = (0..len_a)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        let b: String = (0..len_b)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        let fast = edit_distance(&a, &b);
        let slow = naive_edit_distance(
            &a.chars().collect::<Vec<_>>(),
            &b.chars().collect::<Vec<_>>(),
        );
        assert_eq!(fast, slow, "{a:?} vs {b:?}");
    }
}
