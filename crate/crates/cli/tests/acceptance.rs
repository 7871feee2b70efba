//! Acceptance suite. Each criterion is one test that prints a PASS line;
//! run with `cargo test -p dqc-cli --test acceptance -- --nocapture` to
//! see them all.
//!
//! The oracles in [`oracle`] are direct-definition computations written
//! against the published formulas, independent of the library's
//! implementation paths.

use std::collections::BTreeMap;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dqc_core::coder::{epsilon_for_target_kappa, run_plan, NoisyReplayBackend};
use dqc_core::interventions::{build_plan, InterventionKind, PromptTemplates};
use dqc_core::metrics::{
    agreement_report, classification_metrics, cohen_kappa, confusion, krippendorff_alpha_nominal,
    predicted_name, spearman_rho,
};
use dqc_core::numeric::chi2_survival;
use dqc_core::sampling::{
    check_chi2_assumption, draw_sample_set, exclude_rare_classes, search_design,
    DesignSearchParams, SampleSet,
};
use dqc_core::synthetic::generate_corpus;
use dqc_core::taxonomy::{LabelScheme, Level};
use dqc_core::validity::{
    benjamini_hochberg, between_method_suite, bonferroni, chi2_homogeneity, cramers_v,
    within_method_suite,
};

mod oracle {
    //! Brute-force reference implementations.

    use std::collections::BTreeMap;

    /// Cohen's kappa from raw counts, marginal products for chance.
    pub fn kappa(gold: &[String], pred: &[String]) -> f64 {
        let n = gold.len() as f64;
        let mut gm: BTreeMap<&str, f64> = BTreeMap::new();
        let mut pm: BTreeMap<&str, f64> = BTreeMap::new();
        let mut agree = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            *gm.entry(g).or_insert(0.0) += 1.0;
            *pm.entry(p).or_insert(0.0) += 1.0;
            if g == p {
                agree += 1.0;
            }
        }
        let p_o = agree / n;
        let mut p_e = 0.0;
        for (cat, g) in &gm {
            if let Some(p) = pm.get(cat) {
                p_e += (g / n) * (p / n);
            }
        }
        if (1.0 - p_e).abs() < 1e-15 {
            return if (p_o - 1.0).abs() < 1e-15 { 1.0 } else { 0.0 };
        }
        (p_o - p_e) / (1.0 - p_e)
    }

    /// Krippendorff's alpha by explicitly building the coincidence matrix.
    pub fn alpha(a: &[String], b: &[String]) -> f64 {
        let mut categories: Vec<&String> = a.iter().chain(b.iter()).collect();
        categories.sort();
        categories.dedup();
        let index: BTreeMap<&String, usize> =
            categories.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let k = categories.len();
        let mut coincidence = vec![vec![0.0f64; k]; k];
        for (x, y) in a.iter().zip(b) {
            // each unit has m_u = 2 values; every ordered pair gets
            // weight 1/(m_u - 1) = 1
            coincidence[index[x]][index[y]] += 1.0;
            coincidence[index[y]][index[x]] += 1.0;
        }
        let n: f64 = coincidence.iter().flatten().sum();
        let totals: Vec<f64> = (0..k).map(|i| coincidence[i].iter().sum()).collect();
        if totals.iter().filter(|&&t| t > 0.0).count() <= 1 {
            return 1.0;
        }
        let mut d_o = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    d_o += coincidence[i][j];
                }
            }
        }
        let d_o = d_o / n;
        let mut d_e = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    d_e += totals[i] * totals[j];
                }
            }
        }
        let d_e = d_e / (n * (n - 1.0));
        1.0 - d_o / d_e
    }

    /// Spearman rho by naive rank assignment and textbook Pearson.
    pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
        let rank = |values: &[f64]| -> Vec<f64> {
            values
                .iter()
                .map(|v| {
                    let below = values.iter().filter(|u| *u < v).count() as f64;
                    let equal = values.iter().filter(|u| *u == v).count() as f64;
                    // average of ranks below+1 ..= below+equal
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let rx = rank(x);
        let ry = rank(y);
        let n = rx.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in rx.iter().zip(&ry) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        if sxx == 0.0 || syy == 0.0 {
            return 0.0;
        }
        sxy / (sxx * syy).sqrt()
    }

    /// Per-class precision/recall/F1/support by direct pair counting.
    pub fn per_class(
        gold: &[String],
        pred: &[String],
    ) -> BTreeMap<String, (f64, f64, f64, u64)> {
        let mut classes: Vec<&String> = gold.iter().chain(pred.iter()).collect();
        classes.sort();
        classes.dedup();
        let mut out = BTreeMap::new();
        for class in classes {
            let tp = gold
                .iter()
                .zip(pred)
                .filter(|(g, p)| *g == class && *p == class)
                .count() as f64;
            let fp = gold
                .iter()
                .zip(pred)
                .filter(|(g, p)| *g != class && *p == class)
                .count() as f64;
            let fnn = gold
                .iter()
                .zip(pred)
                .filter(|(g, p)| *g == class && *p != class)
                .count() as f64;
            let support = gold.iter().filter(|g| *g == class).count() as u64;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            out.insert(class.clone(), (precision, recall, f1, support));
        }
        out
    }

    /// Chi-squared statistic, dof, and total from first principles.
    pub fn chi2(table: &[Vec<u64>]) -> (f64, u64, u64) {
        let rows = table.len();
        let cols = table[0].len();
        let row_totals: Vec<f64> = table
            .iter()
            .map(|r| r.iter().map(|&c| c as f64).sum())
            .collect();
        let col_totals: Vec<f64> = (0..cols)
            .map(|j| table.iter().map(|r| r[j] as f64).sum())
            .collect();
        let n: f64 = row_totals.iter().sum();
        let mut statistic = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let expected = row_totals[i] * col_totals[j] / n;
                let observed = table[i][j] as f64;
                statistic += (observed - expected) * (observed - expected) / expected;
            }
        }
        (statistic, ((rows - 1) * (cols - 1)) as u64, n as u64)
    }

    pub fn cramers_v(chi2: f64, n: u64, rows: usize, cols: usize) -> f64 {
        (chi2 / (n as f64 * (rows.min(cols) - 1) as f64)).sqrt()
    }

    /// Exact gamma at half-integer arguments via factorials.
    fn gamma_half_integer(two_a: u64) -> f64 {
        if two_a % 2 == 0 {
            (1..two_a / 2).map(|k| k as f64).product()
        } else {
            let m = (two_a - 1) / 2;
            let mut value = std::f64::consts::PI.sqrt();
            for k in 0..m {
                value *= k as f64 + 0.5;
            }
            value
        }
    }

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

    fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let whole = simpson(f, a, b);
        let mid = 0.5 * (a + b);
        let left = simpson(f, a, mid);
        let right = simpson(f, mid, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            adaptive(f, a, mid, tol / 2.0, depth - 1) + adaptive(f, mid, b, tol / 2.0, depth - 1)
        }
    }

    /// Upper-tail chi-squared probability by adaptive quadrature; the
    /// dof = 1 singularity at zero is removed by substituting t = u^2.
    pub fn chi2_tail(chi2: f64, dof: u64) -> f64 {
        if chi2 <= 0.0 {
            return 1.0;
        }
        let pdf = move |t: f64| chi2_pdf(t, dof);
        if chi2 < dof as f64 {
            if dof == 1 {
                let g = move |u: f64| {
                    2.0f64.sqrt() * (-u * u / 2.0).exp() / gamma_half_integer(1)
                };
                return 1.0 - adaptive(&g, 0.0, chi2.sqrt(), 1e-13, 40);
            }
            return 1.0 - adaptive(&pdf, 0.0, chi2, 1e-13, 40);
        }
        let spread = (2.0 * dof as f64).sqrt();
        let mut upper = chi2 + 20.0 * spread + 60.0;
        while chi2_pdf(upper, dof) > 1e-320 {
            upper += 40.0;
        }
        adaptive(&pdf, chi2, upper, 1e-13, 40)
    }

    /// Benjamini-Hochberg adjusted p-values straight from the
    /// min-over-suffix definition.
    pub fn bh_adjusted(ps: &[f64]) -> Vec<f64> {
        let m = ps.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| ps[a].partial_cmp(&ps[b]).unwrap().then(a.cmp(&b)));
        let mut out = vec![0.0; m];
        for (i, &idx) in order.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, &jdx) in order.iter().enumerate().skip(i) {
                best = best.min((m as f64 * ps[jdx] / (j + 1) as f64).min(1.0));
            }
            out[idx] = best;
        }
        out
    }
}

fn close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: {actual} vs {expected} (tol {tol})"
    );
}

fn rel_close(actual: f64, expected: f64, tol: f64, what: &str) {
    let scale = expected.abs().max(1e-30);
    assert!(
        ((actual - expected) / scale).abs() <= tol || (actual - expected).abs() <= tol,
        "{what}: {actual} vs {expected} (rel tol {tol})"
    );
}

/// The published pairwise table: (method pair, chi2, published V).
const PAIRWISE_PUBLISHED: [(&str, &str, f64, f64); 6] = [
    ("Zero-shot", "Few-shot", 779.078, 0.505),
    ("Zero-shot", "Definitions", 392.335, 0.359),
    ("Zero-shot", "Interactive", 392.772, 0.359),
    ("Few-shot", "Definitions", 1147.722, 0.613),
    ("Few-shot", "Interactive", 415.845, 0.369),
    ("Definitions", "Interactive", 723.666, 0.487),
];

#[test]
fn criterion_01_pairwise_cramers_v_reproduction() {
    // n = 2 methods x 30 samples x 50 items; the tables are 2 x k so
    // min(r, c) - 1 = 1
    for (a, b, chi2, published) in PAIRWISE_PUBLISHED {
        let v = cramers_v(chi2, 3000, 2, 21);
        close(v, published, 0.01, &format!("{a} vs {b}"));
    }
    println!("[PASS] criterion 1: pairwise Cramer's V matches published values within 0.01");
}

#[test]
fn criterion_02_classwise_cramers_v_reproduction() {
    // 4 x 2 tables pooled over 4 methods x 30 samples x 50 items
    let values = [
        ("Government Operations", 807.627, 0.367),
        ("Law and Crime", 437.382, 0.270),
    ];
    for (class, chi2, published) in values {
        let v = cramers_v(chi2, 6000, 4, 2);
        close(v, published, 0.002, class);
    }
    println!("[PASS] criterion 2: classwise Cramer's V matches published values within 0.002");
}

#[test]
fn criterion_03_test_count_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let runs: Vec<Vec<String>> = (0..30)
        .map(|_| {
            (0..50)
                .map(|_| format!("c{}", rng.gen_range(0..5)))
                .collect()
        })
        .collect();
    let within = within_method_suite("m", &runs).unwrap();
    assert_eq!(within.total_tests, 435, "C(30, 2) within-method tests");
    let runs_b: Vec<Vec<String>> = (0..30)
        .map(|_| {
            (0..50)
                .map(|_| format!("c{}", rng.gen_range(0..5)))
                .collect()
        })
        .collect();
    let between = between_method_suite("m", &runs, "other", &runs_b).unwrap();
    assert_eq!(between.total_tests, 30, "index-paired between-method tests");
    println!("[PASS] criterion 3: 435 within-method and 30 between-method tests at N=30");
}

fn random_scheme(k: usize) -> LabelScheme {
    let majors: Vec<String> = (0..k)
        .map(|i| format!("{{\"code\": {i}, \"name\": \"c{i}\"}}"))
        .collect();
    LabelScheme::from_json(&format!("{{\"majors\": [{}]}}", majors.join(","))).unwrap()
}

#[test]
fn criterion_04_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1_000_003);
    for case in 0..1000 {
        let k = rng.gen_range(2..=8usize);
        let n = rng.gen_range(10..=200usize);
        let scheme = random_scheme(k);
        // skewed class draws exercise unbalanced marginals
        let draw = |rng: &mut ChaCha8Rng| -> String {
            let idx = if rng.gen_bool(0.5) {
                0
            } else {
                rng.gen_range(0..k)
            };
            format!("c{idx}")
        };
        let gold: Vec<String> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<String> = gold
            .iter()
            .map(|g| {
                if rng.gen_bool(0.6) {
                    g.clone()
                } else {
                    draw(&mut rng)
                }
            })
            .collect();

        let what = format!("case {case} (k={k}, n={n})");
        rel_close(
            cohen_kappa(&gold, &pred).unwrap(),
            oracle::kappa(&gold, &pred),
            1e-9,
            &format!("{what}: kappa"),
        );
        rel_close(
            krippendorff_alpha_nominal(&gold, &pred).unwrap(),
            oracle::alpha(&gold, &pred),
            1e-9,
            &format!("{what}: alpha"),
        );
        let to_codes = |labels: &[String]| -> Vec<f64> {
            labels
                .iter()
                .map(|l| l.trim_start_matches('c').parse::<f64>().unwrap())
                .collect()
        };
        rel_close(
            spearman_rho(&gold, &pred, &scheme, Level::Major).unwrap(),
            oracle::spearman(&to_codes(&gold), &to_codes(&pred)),
            1e-9,
            &format!("{what}: spearman"),
        );
        let cm = confusion(&gold, &pred).unwrap();
        let summary = classification_metrics(&cm);
        for (class, (precision, recall, f1, support)) in oracle::per_class(&gold, &pred) {
            let ours = &summary.per_class[&class];
            rel_close(ours.precision, precision, 1e-9, &format!("{what}: p {class}"));
            rel_close(ours.recall, recall, 1e-9, &format!("{what}: r {class}"));
            rel_close(ours.f1, f1, 1e-9, &format!("{what}: f1 {class}"));
            assert_eq!(ours.support, support, "{what}: support {class}");
        }

        // a strictly positive random table for the chi-squared family
        let rows = rng.gen_range(2..=5usize);
        let cols = rng.gen_range(2..=8usize);
        let table: Vec<Vec<u64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(1..40u64)).collect())
            .collect();
        let ours = chi2_homogeneity(&table).unwrap();
        let (stat, dof, total) = oracle::chi2(&table);
        rel_close(ours.chi2, stat, 1e-9, &format!("{what}: chi2"));
        assert_eq!(ours.dof, dof);
        rel_close(
            ours.cramers_v,
            oracle::cramers_v(stat, total, rows, cols),
            1e-9,
            &format!("{what}: V"),
        );
        close(
            ours.p_value,
            oracle::chi2_tail(stat, dof),
            1e-8,
            &format!("{what}: p-value"),
        );
    }
    println!(
        "[PASS] criterion 4: kappa/alpha/spearman/PRF/chi2/V match brute-force oracles to 1e-9 \
         relative and p-values match quadrature to 1e-8 on 1000 random instances"
    );
}

#[test]
fn criterion_05_known_value_statistics() {
    let s = |xs: &[&str]| -> Vec<String> { xs.iter().map(|x| x.to_string()).collect() };
    let kappa = cohen_kappa(&s(&["L", "L", "C", "C"]), &s(&["L", "C", "L", "C"])).unwrap();
    close(kappa, 0.0, 1e-3, "kappa on the half-agreement case");
    let alpha = krippendorff_alpha_nominal(&s(&["a", "a", "b"]), &s(&["a", "b", "b"])).unwrap();
    close(alpha, 0.4444444444, 1e-3, "alpha on the worked case");
    let r = chi2_homogeneity(&[vec![30, 20], vec![20, 30]]).unwrap();
    close(r.chi2, 4.0, 1e-3, "chi2 on [[30,20],[20,30]]");
    close(r.p_value, 0.04550, 1e-3, "p-value at chi2=4, dof=1");
    close(r.cramers_v, 0.2, 1e-3, "V on [[30,20],[20,30]]");
    close(chi2_survival(3.841, 1), 0.0500, 1e-3, "p at the 0.05 critical value");
    println!("[PASS] criterion 5: known-value statistics reproduce within 1e-3");
}

#[test]
fn criterion_06_correction_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..10_000 {
        let m = rng.gen_range(1..=40usize);
        let ps: Vec<f64> = (0..m)
            .map(|_| {
                // mix tiny and ordinary p-values
                if rng.gen_bool(0.3) {
                    rng.gen::<f64>() * 0.01
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let (_, bonf) = bonferroni(&ps, 0.05);
        let (bh_adj, bh) = benjamini_hochberg(&ps, 0.05);
        for (i, (b, f)) in bonf.iter().zip(&bh).enumerate() {
            assert!(!b || *f, "bonferroni reject at {i} must imply BH reject");
        }
        let expect = oracle::bh_adjusted(&ps);
        for (a, e) in bh_adj.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12, "adjusted {a} vs suffix-min {e}");
        }
    }
    println!(
        "[PASS] criterion 6: Bonferroni rejections are a subset of BH and BH adjusted \
         p-values equal the min-over-suffix definition on 10000 random vectors"
    );
}

#[test]
fn criterion_07_sampling_design_property() {
    let scheme = LabelScheme::default_cap();
    let corpus = generate_corpus(&scheme, 2000, 42);
    let (corpus, excluded) = exclude_rare_classes(&corpus, 5, Level::Major).unwrap();
    let params = DesignSearchParams {
        size_start: 500,
        size_step: 50,
        count_max: 30,
        seed: 11,
    };
    let found = search_design(&corpus, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("design.json");
    let mut set = found.sample_set.clone();
    set.excluded = excluded;
    set.save(&path).unwrap();
    let mut reloaded = SampleSet::load(&path).unwrap();
    reloaded.recompute_strata(&corpus);
    let (_, vectors) = reloaded.count_vectors();
    assert!(vectors.len() >= 2);
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let check =
                check_chi2_assumption(&[vectors[i].clone(), vectors[j].clone()]).unwrap();
            assert!(
                check.passed,
                "pair ({i},{j}) fraction {:.3} must be >= 0.80",
                check.fraction_ok
            );
        }
    }
    println!(
        "[PASS] criterion 7: design search returned n={} N={} and every pairwise \
         expected-frequency check re-verifies from the persisted sample set",
        found.n, found.count
    );
}

#[test]
fn criterion_08_simulated_coder_calibration() {
    // end to end at epsilon = 0: accuracy = kappa = alpha = 1
    let scheme = LabelScheme::default_cap();
    let corpus = generate_corpus(&scheme, 600, 8);
    let pool: Vec<String> = corpus.records[..10].iter().map(|r| r.id.clone()).collect();
    let sample: Vec<String> = corpus.records[10..60].iter().map(|r| r.id.clone()).collect();
    let plan = build_plan(
        InterventionKind::StepByStep,
        &scheme,
        &sample,
        &corpus,
        None,
        &pool,
        &PromptTemplates::default(),
        25,
        1,
    )
    .unwrap();
    let mut backend = NoisyReplayBackend::uniform(&corpus, &scheme, 0.0, 99);
    let run = run_plan(&plan, &mut backend, &scheme, 0).unwrap();
    let pairs: Vec<(String, String)> = run
        .predictions
        .iter()
        .map(|(id, p)| {
            (
                corpus.record_by_id(id).unwrap().gold_major.name.clone(),
                predicted_name(&p.label).to_string(),
            )
        })
        .collect();
    let report = agreement_report(&pairs, &scheme, Level::Major).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.kappa, 1.0);
    assert_eq!(report.alpha, 1.0);

    // independent uniform coders over >= 4 classes at 10000 items
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let classes = ["w", "x", "y", "z"];
    let gold: Vec<String> = (0..10_000)
        .map(|_| classes[rng.gen_range(0..4)].to_string())
        .collect();
    let pred: Vec<String> = (0..10_000)
        .map(|_| classes[rng.gen_range(0..4)].to_string())
        .collect();
    let kappa = cohen_kappa(&gold, &pred).unwrap();
    let alpha = krippendorff_alpha_nominal(&gold, &pred).unwrap();
    assert!(kappa.abs() < 0.05, "kappa {kappa}");
    assert!(alpha.abs() < 0.05, "alpha {alpha}");
    println!(
        "[PASS] criterion 8: epsilon=0 replay scores accuracy=kappa=alpha=1 end to end and \
         independent coders score |kappa|,|alpha| < 0.05"
    );
}

#[test]
fn criterion_09_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_dqc");
    let corpus_path = dir.path().join("raw.csv");
    let status = Command::new(bin)
        .args([
            "gen-corpus",
            "--rows",
            "1200",
            "--seed",
            "42",
            "--out-file",
        ])
        .arg(&corpus_path)
        .args(["--out"])
        .arg(dir.path().join("gen_out"))
        .status()
        .expect("run gen-corpus");
    assert!(status.success());
    let run_pipeline = |out: &std::path::Path| {
        let status = Command::new(bin)
            .args(["pipeline", "--corpus"])
            .arg(&corpus_path)
            .args([
                "--seed", "7", "--backend", "replay", "--n", "40", "--N", "6", "--out",
            ])
            .arg(out)
            .status()
            .expect("run pipeline");
        assert!(status.success(), "pipeline must exit 0");
    };
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    run_pipeline(&out1);
    run_pipeline(&out2);
    let mut compared = 0;
    for sub in ["reports", "plots"] {
        let base1 = out1.join(sub);
        for entry in std::fs::read_dir(&base1).unwrap() {
            let path1 = entry.unwrap().path();
            let name = path1.file_name().unwrap();
            let path2 = out2.join(sub).join(name);
            let bytes1 = std::fs::read(&path1).unwrap();
            let bytes2 = std::fs::read(&path2).unwrap();
            assert_eq!(
                bytes1,
                bytes2,
                "{} must be byte-identical across runs",
                path1.display()
            );
            compared += 1;
        }
    }
    assert!(compared >= 20, "expected a full report bundle, saw {compared}");
    println!(
        "[PASS] criterion 9: two pipeline executions produced byte-identical report bundles \
         ({compared} files compared)"
    );
}

#[test]
fn criterion_10_noisy_replay_reproduces_target_kappa() {
    // The published headline numbers come from hosted models and are out
    // of reach at desk scale; instead the measurement machinery is
    // validated by tuning a noisy replay to hit target kappas at the same
    // pooled size (30 samples x 50 items).
    let scheme = LabelScheme::default_cap();
    let corpus = generate_corpus(&scheme, 2000, 42);
    let (corpus, _) = exclude_rare_classes(&corpus, 5, Level::Major).unwrap();
    let set = draw_sample_set(&corpus, 50, 30, 500).unwrap();
    let templates = PromptTemplates::default();
    for (case, target) in [(0u64, 0.744f64), (1, 0.30)] {
        // pooled gold distribution over the sampled items
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        let mut total = 0.0;
        for sample in &set.samples {
            for id in sample {
                let name = corpus.record_by_id(id).unwrap().gold_major.name.clone();
                *counts.entry(name).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        for v in counts.values_mut() {
            *v /= total;
        }
        let epsilon = epsilon_for_target_kappa(&counts, scheme.major_count(), target);
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (i, sample) in set.samples.iter().enumerate() {
            let plan = build_plan(
                InterventionKind::ZeroShot,
                &scheme,
                sample,
                &corpus,
                None,
                &[],
                &templates,
                25,
                i as u64,
            )
            .unwrap();
            // independent noise per session so repeated items are rated
            // independently, as in the repeated-measures design
            let mut backend = NoisyReplayBackend::uniform(
                &corpus,
                &scheme,
                epsilon,
                4242 + case * 1000 + i as u64,
            );
            let run = run_plan(&plan, &mut backend, &scheme, i).unwrap();
            for (id, p) in &run.predictions {
                pairs.push((
                    corpus.record_by_id(id).unwrap().gold_major.name.clone(),
                    predicted_name(&p.label).to_string(),
                ));
            }
        }
        assert_eq!(pairs.len(), 1500);
        let gold: Vec<String> = pairs.iter().map(|(g, _)| g.clone()).collect();
        let pred: Vec<String> = pairs.iter().map(|(_, p)| p.clone()).collect();
        let kappa = cohen_kappa(&gold, &pred).unwrap();
        close(
            kappa,
            target,
            0.02,
            &format!("pooled kappa at target {target} (epsilon {epsilon:.4})"),
        );
    }
    println!(
        "[PASS] criterion 10: a tuned noisy replay reproduces target kappas within 0.02 at \
         1500 pooled items (published headline LLM results declared out of desk-scale reach)"
    );
}

#[test]
fn criterion_09b_missing_api_key_fails_validation_before_requests() {
    // companion check to the exit-code contract: http backend without a
    // key exits 1 before any network activity
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_dqc");
    let corpus_path = dir.path().join("raw.csv");
    let status = Command::new(bin)
        .args(["gen-corpus", "--rows", "300", "--seed", "42", "--out-file"])
        .arg(&corpus_path)
        .args(["--out"])
        .arg(dir.path().join("gen_out"))
        .status()
        .unwrap();
    assert!(status.success());
    let out = dir.path().join("run");
    for stage in ["ingest", "sample"] {
        let status = Command::new(bin)
            .args([stage, "--corpus"])
            .arg(&corpus_path)
            .args(["--seed", "7", "--n", "20", "--N", "2", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "{stage} must succeed");
    }
    let output = Command::new(bin)
        .args(["code", "--corpus"])
        .arg(&corpus_path)
        .args([
            "--seed",
            "7",
            "--n",
            "20",
            "--N",
            "2",
            "--backend",
            "http",
            "--endpoint",
            "http://127.0.0.1:9/v1/chat/completions",
            "--api-key-env",
            "DQC_ACCEPTANCE_NO_SUCH_KEY",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(1),
        "missing key is a validation failure: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("DQC_ACCEPTANCE_NO_SUCH_KEY"));
    println!("[PASS] criterion 9 companion: http coding without a key exits 1 before any request");
}
