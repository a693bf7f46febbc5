//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use teachaudit::biasstats::{
    bootstrap_ci, chi_square_sf, friedman, friedman_matrix, mab, mdb, pearson_r, ranking_table,
    zscores_of, BootstrapConfig, BootstrapStat, CiTarget, MetricKind, ScoreTable, TrialKey,
};
use teachaudit::cohort::Cohort;
use teachaudit::corpus::{bundled_fixture, Dataset, DatasetKind, Explanation, LeveledSubject};
use teachaudit::modelgate::{Gateway, GatewayOptions, ModelConfig, OracleProfile};
use teachaudit::promptkit::{RankingPresentation, Role, TemplateSet};
use teachaudit::readability::{analyze, clamp_tgl, coleman_liau, fkgl, fog, tgl, TextStats};
use teachaudit::report::{analyze_runs, Analysis, LabeledRun, SubgroupAnalysis};
use teachaudit::taskrunner::{
    parse_choice, run_ranking, OutcomeKind, RankingOptions, RankingResults, RunResults,
    DEFAULT_REFUSAL_MARKERS,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn markers() -> Vec<String> {
    DEFAULT_REFUSAL_MARKERS.iter().map(|s| s.to_string()).collect()
}

fn ratio(s: &str) -> f64 {
    let (n, d) = s.split_once('/').expect("n/d");
    n.parse::<f64>().unwrap() / d.parse::<f64>().unwrap()
}

// 1 -------------------------------------------------------------------------

#[derive(Deserialize)]
struct SentenceOracle {
    text: String,
    sentences: usize,
    words: usize,
    syllables: usize,
    letters: usize,
    complex_words: usize,
    fkgl: String,
    fog: String,
    coleman_liau: String,
}

fn readability_oracle() -> Outcome {
    let start = Instant::now();
    let raw = std::fs::read_to_string(fixture_path("readability_sentences.json")).unwrap();
    let cases: Vec<SentenceOracle> = serde_json::from_str(&raw).unwrap();
    ensure(cases.len() == 10, format!("{} sentences in fixture", cases.len()))?;
    let mut worst = 0.0f64;
    for c in &cases {
        let want = TextStats {
            sentences: c.sentences,
            words: c.words,
            syllables: c.syllables,
            letters: c.letters,
            complex_words: c.complex_words,
        };
        let got = analyze(&c.text);
        ensure(got == want, format!("{:?}: stats {got:?} != {want:?}", c.text))?;
        for (name, value, expected) in [
            ("fkgl", fkgl(&got).unwrap().0, ratio(&c.fkgl)),
            ("fog", fog(&got).unwrap().0, ratio(&c.fog)),
            ("coleman_liau", coleman_liau(&got).unwrap().0, ratio(&c.coleman_liau)),
        ] {
            let err = (value - expected).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9, format!("{:?}: {name} {value} vs {expected}", c.text))?;
        }
    }
    let cat = analyze("The cat sat on the mat.");
    let (f, g, c) = (fkgl(&cat).unwrap().0, fog(&cat).unwrap().0, coleman_liau(&cat).unwrap().0);
    ensure((f + 1.45).abs() <= 1e-9, format!("cat fkgl {f}"))?;
    ensure((g - 2.4).abs() <= 1e-9, format!("cat fog {g}"))?;
    ensure((c + 4.0733).abs() <= 1e-4, format!("cat coleman_liau {c}"))?;
    let t = tgl("The cat sat on the mat.").unwrap().0;
    ensure(t == 0.0, format!("cat tgl {t}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "10 sentences exact, max formula error {worst:.1e}; cat = ({f:.4}, {g:.4}, {c:.4}), TGL {t}; {elapsed:.2?}"
    ))
}

// 2 -------------------------------------------------------------------------

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn readability_correlation() -> Outcome {
    let start = Instant::now();
    let d = bundled_fixture();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for s in &d.subjects {
        for e in &s.explanations {
            let st = analyze(&e.text);
            let (a, b, c) = (fkgl(&st).unwrap().0, fog(&st).unwrap().0, coleman_liau(&st).unwrap().0);
            cols[0].push(a);
            cols[1].push(b);
            cols[2].push(c);
            cols[3].push(clamp_tgl((a + b + c) / 3.0));
            ensure(tgl(&e.text).unwrap().0 == *cols[3].last().unwrap(), "tgl mismatch")?;
        }
    }
    let docs = cols[0].len();
    ensure(docs >= 50, format!("only {docs} documents"))?;
    let names = ["FK", "Fog", "CL", "TGL"];
    let mut parts = Vec::new();
    let mut min_r = f64::INFINITY;
    for (i, j) in [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)] {
        let r = pearson_r(&cols[i], &cols[j]).unwrap();
        let oracle = pearson_oracle(&cols[i], &cols[j]);
        ensure((r - oracle).abs() < 1e-12, format!("pearson_r {r} vs oracle {oracle}"))?;
        ensure(r > 0.9, format!("r({}, {}) = {r:.4}", names[i], names[j]))?;
        min_r = min_r.min(r);
        parts.push(format!("{}-{} {r:.3}", names[i], names[j]));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("{docs} docs, min r {min_r:.3} [{}]; {elapsed:.2?}", parts.join(", ")))
}

// 3 -------------------------------------------------------------------------

fn normalization_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_moment, mut worst_affine) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=9);
        let points: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let z = zscores_of(&points).map_err(|e| format!("{points:?}: {e}"))?;
        let nf = n as f64;
        let mean = z.iter().sum::<f64>() / nf;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
        worst_moment = worst_moment.max(mean.abs()).max((sd - 1.0).abs());

        let alpha = rng.random_range(0.1..10.0);
        let beta = rng.random_range(-10.0..10.0);
        let moved: Vec<f64> = points.iter().map(|x| alpha * x + beta).collect();
        let z2 = zscores_of(&moved).map_err(|e| e.to_string())?;
        for (a, b) in z.iter().zip(&z2) {
            worst_affine = worst_affine.max((a - b).abs());
        }
        worst_affine = worst_affine
            .max((mab(&z) - mab(&z2)).abs())
            .max((mdb(&z) - mdb(&z2)).abs());
    }
    ensure(worst_moment <= 1e-12, format!("mean/sd off by {worst_moment:e}"))?;
    ensure(worst_affine <= 1e-12, format!("affine drift {worst_affine:e}"))?;
    Ok(format!(
        "1000 maps: max |mean|,|sd-1| {worst_moment:.1e}; max affine drift {worst_affine:.1e}"
    ))
}

// 4 -------------------------------------------------------------------------

fn forced_two_member() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases = 0;
    for _ in 0..100_000 {
        let a: f64 = rng.random_range(-1e3..1e3);
        let b: f64 = rng.random_range(-1e3..1e3);
        if a == b {
            continue;
        }
        let z = zscores_of(&[a, b]).map_err(|e| e.to_string())?;
        ensure(mab(&z) == 1.0, format!("MAB {} for ({a}, {b})", mab(&z)))?;
        ensure(mdb(&z) == 2.0, format!("MDB {} for ({a}, {b})", mdb(&z)))?;
        cases += 1;
    }
    // The same through the full pipeline on the bundled cohort.
    let r = mock_ranking(
        &bundled_fixture(),
        &Cohort::bundled(),
        OracleProfile {
            noise_sd: 1.0,
            seed: 4,
            ..OracleProfile::default()
        },
        2,
    );
    let a = analysis(&r, &Cohort::bundled(), 200);
    let mut pipeline = 0;
    for g in a.runs[0].subgroups.iter().filter(|g| g.members.len() == 2 && !g.degenerate) {
        ensure(g.mab == Some(1.0) && g.mdb == Some(2.0), format!("{}: {:?} {:?}", g.subgroup, g.mab, g.mdb))?;
        pipeline += 1;
    }
    ensure(pipeline > 0, "no non-degenerate two-member subgroup in the pipeline run")?;
    Ok(format!("{cases} random pairs and {pipeline} pipeline subgroups give exactly 1 and 2"))
}

// 5 -------------------------------------------------------------------------

/// Midranks by counting: 1 + #smaller + (#equal - 1) / 2.
fn rank_oracle(row: &[f64]) -> Vec<f64> {
    row.iter()
        .map(|x| {
            let less = row.iter().filter(|y| *y < x).count() as f64;
            let equal = row.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Friedman statistic in the sums-of-squares form.
fn friedman_oracle(rows: &[Vec<f64>]) -> (f64, f64) {
    let n = rows.len() as f64;
    let k = rows[0].len();
    let ranks: Vec<Vec<f64>> = rows.iter().map(|r| rank_oracle(r)).collect();
    let grand = (k as f64 + 1.0) / 2.0;
    let ss_t: f64 = (0..k)
        .map(|j| {
            let mean_j = ranks.iter().map(|r| r[j]).sum::<f64>() / n;
            n * (mean_j - grand).powi(2)
        })
        .sum();
    let ss_e: f64 = ranks.iter().flatten().map(|r| (r - grand).powi(2)).sum::<f64>()
        / (n * (k as f64 - 1.0));
    let q = if ss_e == 0.0 { 0.0 } else { ss_t / ss_e };
    let x = q;
    let erfc = libm::erfc((x / 2.0).sqrt());
    let p = match k - 1 {
        1 => erfc,
        2 => (-x / 2.0).exp(),
        3 => erfc + (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp(),
        df => panic!("no closed form for df {df}"),
    };
    (q, p)
}

fn cohort_json(subgroups: &[(&str, &[&str])]) -> Cohort {
    let groups: Vec<serde_json::Value> = subgroups
        .iter()
        .map(|(id, members)| {
            serde_json::json!({
                "id": id,
                "name": id,
                "characteristics": members
                    .iter()
                    .map(|m| serde_json::json!({"id": m, "phrase": m, "article": "a"}))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    Cohort::from_json(&serde_json::json!({"version": "acceptance", "subgroups": groups}).to_string())
        .unwrap()
}

fn friedman_correctness() -> Outcome {
    let hand = friedman_matrix(&vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
    ensure(hand.q == 8.0 && hand.df == 2, format!("hand example {hand:?}"))?;
    ensure((hand.p - (-4.0f64).exp()).abs() <= 1e-9, format!("hand p {}", hand.p))?;
    let flat = friedman_matrix(&vec![vec![5.0, 5.0, 5.0]; 4]).unwrap();
    ensure(flat.q == 0.0 && flat.p == 1.0, format!("identical columns {flat:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let names = ["c0", "c1", "c2", "c3"];
    let mut worst = 0.0f64;
    for t in 0..200 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2..=6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(1..=4) as f64).collect())
            .collect();
        let (q, p) = friedman_oracle(&rows);
        let direct = friedman_matrix(&rows).map_err(|e| format!("table {t}: {e}"))?;

        // Same table through a ScoreTable keyed by trial.
        let cohort = cohort_json(&[("g", &names[..k])]);
        let mut table = ScoreTable::empty(MetricKind::Mcv, &cohort);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let key = TrialKey {
                    unit: format!("s{i}"),
                    ordering: 0,
                };
                table.push(names[j], key, *v);
            }
        }
        let via_table = friedman(&table, &cohort.subgroups[0]).map_err(|e| e.to_string())?;
        for got in [&direct, &via_table] {
            let err = (got.q - q).abs().max((got.p - p).abs());
            worst = worst.max(err);
            ensure(err <= 1e-9, format!("table {t} {rows:?}: got Q={} p={}, oracle Q={q} p={p}", got.q, got.p))?;
            ensure(got.df == k - 1 && got.blocks == n, format!("table {t}: df/blocks"))?;
        }
    }
    Ok(format!(
        "hand Q={} p={:.12}; identical Q=0 p=1; 200 random tables within {worst:.1e} via both entry points",
        hand.q, hand.p
    ))
}

// 6 -------------------------------------------------------------------------

fn chi_square_accuracy() -> Outcome {
    let mut worst = 0.0f64;
    let mut x: f64 = 0.05;
    while x <= 60.0 {
        let want = (-x / 2.0).exp();
        let rel = (chi_square_sf(x, 2) - want).abs() / want;
        worst = worst.max(rel);
        x += 0.05;
    }
    ensure(worst < 1e-10, format!("df=2 relative error {worst:e}"))?;
    // High-precision references (40-digit evaluation of the regularized
    // upper incomplete gamma function).
    let table = [
        (3.841, 1, 0.050_013_683_763_957),
        (6.635, 1, 0.009_999_419_574_042_5),
        (11.070, 5, 0.050_009_618_622_405),
        (9.236, 5, 0.100_013_151_124_780),
        (15.086, 5, 0.010_001_124_762_186),
    ];
    let mut worst_tab = 0.0f64;
    for (x, df, want) in table {
        let got = chi_square_sf(x, df);
        let rel = (got - want).abs() / want;
        worst_tab = worst_tab.max(rel);
        ensure(rel < 1e-6, format!("sf({x}, {df}) = {got} vs {want}"))?;
    }
    for (x, df) in [(3.841, 1), (11.070, 5)] {
        let p = chi_square_sf(x, df);
        ensure((p - 0.05).abs() < 1e-3, format!("sf({x}, {df}) = {p}, expected about 0.050"))?;
    }
    Ok(format!(
        "df=2 max rel error {worst:.1e}; tabulated max rel error {worst_tab:.1e}; sf(3.841,1)={:.4}, sf(11.070,5)={:.4}",
        chi_square_sf(3.841, 1),
        chi_square_sf(11.070, 5)
    ))
}

// shared pipeline helpers ----------------------------------------------------

fn synthetic_dataset(subjects: usize, levels: u32) -> Dataset {
    Dataset {
        name: "synthetic".into(),
        level_count: levels,
        kind: DatasetKind::Text,
        subjects: (0..subjects)
            .map(|i| LeveledSubject {
                subject_id: format!("s{i:03}"),
                title: format!("Subject {i}"),
                topic_label: None,
                explanations: (1..=levels)
                    .map(|l| Explanation {
                        level: l,
                        text: format!("Explanation of subject {i} at level {l}."),
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn mock_ranking(d: &Dataset, cohort: &Cohort, profile: OracleProfile, orderings: usize) -> RankingResults {
    let gw = Gateway::new(ModelConfig::mock("oracle", profile), GatewayOptions::default()).unwrap();
    let opts = RankingOptions {
        role: Role::Teacher,
        n_orderings: orderings,
        distinct_orderings: false,
        seed: 1,
        concurrency: 8,
        refusal_markers: markers(),
    };
    let (r, stats) = run_ranking(d, cohort, &gw, &TemplateSet::default(), &opts, None).unwrap();
    assert_eq!(stats.failures, 0);
    r
}

fn analysis(r: &RankingResults, cohort: &Cohort, replicates: usize) -> Analysis {
    let run = LabeledRun {
        source: "run.jsonl".into(),
        results: RunResults::Ranking(r.clone()),
        sha256: None,
    };
    let cfg = BootstrapConfig {
        replicates,
        level: 0.95,
        seed: 17,
    };
    analyze_runs(&[run], cohort, cfg).unwrap().analysis
}

fn subgroup<'a>(a: &'a Analysis, id: &str) -> &'a SubgroupAnalysis {
    a.runs[0].subgroups.iter().find(|g| g.subgroup == id).unwrap()
}

// 7 -------------------------------------------------------------------------

fn bias_recovery() -> Outcome {
    let start = Instant::now();
    let offsets = [("lowland", -1.0), ("midland", 0.0), ("highland", 1.0)];
    let cohort = cohort_json(&[("band", &["lowland", "midland", "highland"])]);
    let profile = OracleProfile {
        base_level: 3.0,
        offsets: offsets.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        noise_sd: 0.5,
        seed: 7,
        ..OracleProfile::default()
    };
    let r = mock_ranking(&synthetic_dataset(100, 5), &cohort, profile, 2);
    let a = analysis(&r, &cohort, 1000);
    let g = subgroup(&a, "band");

    // Expected z: the standardized offsets.
    let o: Vec<f64> = offsets.iter().map(|(_, v)| *v).collect();
    let mean = o.iter().sum::<f64>() / 3.0;
    let sd = (o.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let want_z: Vec<f64> = o.iter().map(|v| (v - mean) / sd).collect();
    let want_mab = want_z.iter().map(|z| z.abs()).sum::<f64>() / 3.0;
    let want_mdb = want_z[2] - want_z[0];

    let points: Vec<f64> = g.members.iter().map(|m| m.point.unwrap()).collect();
    ensure(points[0] < points[1] && points[1] < points[2], format!("MCV order {points:?}"))?;
    let z: Vec<f64> = g.members.iter().map(|m| m.z.unwrap()).collect();
    for (got, want) in z.iter().zip(&want_z) {
        ensure((got - want).abs() <= 0.05, format!("z {z:?} vs {want_z:?}"))?;
    }
    let (m, d) = (g.mab.unwrap(), g.mdb.unwrap());
    ensure((m - want_mab).abs() <= 0.05, format!("MAB {m} vs {want_mab}"))?;
    ensure((d - want_mdb).abs() <= 0.1, format!("MDB {d} vs {want_mdb}"))?;
    let p = g.friedman.as_ref().map(|f| f.p).ok_or("no Friedman result")?;
    ensure(p < 0.001, format!("Friedman p {p}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "MCV {:.3}/{:.3}/{:.3}, z {:.4}/{:.4}/{:.4}, MAB {m:.4}, MDB {d:.4}, p {p:.1e}; {elapsed:.2?}",
        points[0], points[1], points[2], z[0], z[1], z[2]
    ))
}

// 8 -------------------------------------------------------------------------

fn refusal_handling() -> Outcome {
    let cohort = cohort_json(&[("g", &["guarded", "open", "plain"])]);
    let d = synthetic_dataset(200, 5);
    let base = OracleProfile {
        noise_sd: 1.0,
        seed: 8,
        ..OracleProfile::default()
    };
    let refusing = OracleProfile {
        refusals: BTreeMap::from([("guarded".to_string(), 0.95)]),
        default_refusal: 0.1,
        ..base.clone()
    };
    let with = mock_ranking(&d, &cohort, refusing, 2);
    let without = mock_ranking(&d, &cohort, base, 2);
    let a_with = analysis(&with, &cohort, 1000);
    let a_without = analysis(&without, &cohort, 1000);

    let table = ranking_table(&with, &cohort);
    let mut rates = Vec::new();
    for (m, configured) in subgroup(&a_with, "g").members.iter().zip([0.95, 0.1, 0.1]) {
        let recs: Vec<_> = with.records.iter().filter(|r| r.spec.characteristic_id == m.id).collect();
        let refused = recs.iter().filter(|r| r.outcome.kind == OutcomeKind::FullRefusal).count();
        let chosen: Vec<f64> = recs
            .iter()
            .filter(|r| r.outcome.kind == OutcomeKind::Chosen)
            .map(|r| r.outcome.level.unwrap() as f64)
            .collect();
        ensure(m.n_trials == recs.len() && m.n_full_refusals == refused, format!("{}: counts", m.id))?;
        let rate = m.n_full_refusals as f64 / m.n_trials as f64;
        ensure((rate - configured).abs() <= 0.05, format!("{}: rate {rate} vs {configured}", m.id))?;
        let retained: Vec<f64> = table.values(&m.id).collect();
        ensure(retained.len() == chosen.len() && m.n_retained == chosen.len(), format!("{}: retained", m.id))?;
        let mut sorted_table = retained.clone();
        let mut sorted_chosen = chosen.clone();
        sorted_table.sort_by(f64::total_cmp);
        sorted_chosen.sort_by(f64::total_cmp);
        ensure(sorted_table == sorted_chosen, format!("{}: table holds non-chosen values", m.id))?;
        rates.push(format!("{} {rate:.3}", m.id));
    }

    let width = |a: &Analysis| {
        let m = &subgroup(a, "g").members[0];
        let ci = m.point_ci.unwrap();
        ci.hi - ci.lo
    };
    let (w_with, w_without) = (width(&a_with), width(&a_without));
    ensure(w_with > w_without, format!("CI width {w_with} not wider than {w_without}"))?;
    Ok(format!(
        "refusal rates [{}]; full refusals excluded; guarded CI width {w_with:.3} vs {w_without:.3} without refusals",
        rates.join(", ")
    ))
}

// 9 -------------------------------------------------------------------------

fn gaussian_table(cohort: &Cohort, rng: &mut ChaCha8Rng, n: usize, mu: f64) -> ScoreTable {
    let normal = Normal::new(mu, 1.0).unwrap();
    let mut t = ScoreTable::empty(MetricKind::Mcv, cohort);
    for i in 0..n {
        for c in ["a", "b"] {
            let key = TrialKey {
                unit: format!("s{i}"),
                ordering: 0,
            };
            t.push(c, key, normal.sample(rng));
        }
    }
    t
}

fn bootstrap_calibration() -> Outcome {
    let start = Instant::now();
    let cohort = cohort_json(&[("g", &["a", "b"])]);
    let target = CiTarget {
        subgroup: "g".into(),
        characteristic: Some("a".into()),
    };
    let mu = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trials = 500;
    let mut covered = 0;
    for t in 0..trials {
        let table = gaussian_table(&cohort, &mut rng, 100, mu);
        let cis = bootstrap_ci(&table, &cohort, BootstrapStat::Point, 1000, 0.95, t).unwrap();
        let ci = cis[&target];
        if ci.lo <= mu && mu <= ci.hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / trials as f64;
    ensure((coverage - 0.95).abs() <= 0.03, format!("coverage {coverage}"))?;

    let mut flat = ScoreTable::empty(MetricKind::Mcv, &cohort);
    for i in 0..50 {
        for c in ["a", "b"] {
            flat.push(c, TrialKey { unit: format!("s{i}"), ordering: 0 }, 3.0);
        }
    }
    let cis = bootstrap_ci(&flat, &cohort, BootstrapStat::Point, 500, 0.95, 1).unwrap();
    for ci in cis.values() {
        ensure(ci.lo == 3.0 && ci.hi == 3.0, format!("constant data interval {ci:?}"))?;
    }

    // Same seed, same bytes: repeated, and under one and four worker threads.
    let cohort = Cohort::bundled();
    let r = mock_ranking(
        &bundled_fixture(),
        &cohort,
        OracleProfile {
            noise_sd: 1.0,
            seed: 9,
            default_refusal: 0.05,
            ..OracleProfile::default()
        },
        3,
    );
    let json = || serde_json::to_string_pretty(&analysis(&r, &cohort, 500)).unwrap();
    let pool = |threads| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let first = json();
    let second = json();
    let one = pool(1).install(json);
    let four = pool(4).install(json);
    ensure(first == second, "analysis JSON differs between runs")?;
    ensure(first == one && first == four, "analysis JSON depends on thread count")?;
    Ok(format!(
        "coverage {coverage:.3} over {trials} trials; constant data gives (3, 3); analysis JSON identical across runs and 1/4 threads; {:.1?}",
        start.elapsed()
    ))
}

// 10 ------------------------------------------------------------------------

fn audit(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_audit")).args(args).output().unwrap();
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "audit {args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    for sub in ["runs", "report"] {
        walk(&root.join(sub), root, &mut out);
    }
    out
}

fn compare(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>, what: &str) -> Result<(), String> {
    ensure(a.keys().eq(b.keys()), format!("{what}: file sets differ"))?;
    for (k, v) in a {
        ensure(&b[k] == v, format!("{what}: {} differs", k.display()))?;
    }
    Ok(())
}

fn determinism_and_replay() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    audit(&["demo", "--out", one.to_str().unwrap()])?;
    audit(&["demo", "--out", two.to_str().unwrap(), "--concurrency", "8"])?;
    let (t1, t2) = (tree(&one), tree(&two));
    compare(&t1, &t2, "clean runs")?;
    let kinds = ["jsonl", "json", "csv", "svg"]
        .map(|ext| t1.keys().filter(|p| p.extension().is_some_and(|e| e == ext)).count());
    ensure(kinds.iter().all(|&n| n > 0), format!("missing output kinds {kinds:?}"))?;

    // Replay from the cache only.
    std::fs::remove_dir_all(one.join("runs")).unwrap();
    std::fs::remove_dir_all(one.join("report")).unwrap();
    audit(&["demo", "--out", one.to_str().unwrap(), "--offline"])?;
    compare(&tree(&one), &t2, "offline replay")?;

    // Without a cache the offline run must fail rather than call the model.
    let three = tmp.path().join("three");
    ensure(
        audit(&["demo", "--out", three.to_str().unwrap(), "--offline"]).is_err(),
        "offline run with an empty cache succeeded",
    )?;
    Ok(format!(
        "{} files ({} results, {} JSON, {} CSV, {} SVG) identical across clean runs and offline replay",
        t1.len(),
        kinds[0],
        kinds[1],
        kinds[2],
        kinds[3]
    ))
}

// 11 ------------------------------------------------------------------------

fn permutations(items: Vec<u32>) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut p in permutations(rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn presentation(perm: &[u32]) -> RankingPresentation {
    RankingPresentation {
        permutation: perm.to_vec(),
        letters: (0..perm.len() as u8).map(|i| (b'A' + i) as char).collect(),
        choice_block: String::new(),
    }
}

#[derive(Deserialize)]
struct ResponseCase {
    text: String,
    permutation: Vec<u32>,
    kind: OutcomeKind,
    level: Option<u32>,
    partial_refusal: bool,
}

fn parsing_exhaustive() -> Outcome {
    let markers = markers();
    let mut checked = 0;
    for l in [3u32, 5] {
        for perm in permutations((1..=l).collect()) {
            let pres = presentation(&perm);
            for (pos, &level) in perm.iter().enumerate() {
                let letter = (b'A' + pos as u8) as char;
                for text in [
                    letter.to_string(),
                    letter.to_ascii_lowercase().to_string(),
                    format!("{letter}."),
                    format!("Answer: {letter}"),
                    format!("**{letter}**"),
                ] {
                    let o = parse_choice(&text, l as usize, &pres, &markers);
                    ensure(
                        o.kind == OutcomeKind::Chosen && o.level == Some(level) && !o.partial_refusal,
                        format!("L={l} {perm:?} {text:?} -> {o:?}"),
                    )?;
                    checked += 1;
                }
            }
            let beyond = ((b'A' + l as u8) as char).to_string();
            let o = parse_choice(&beyond, l as usize, &pres, &markers);
            ensure(o.kind == OutcomeKind::Unparseable, format!("L={l} {beyond:?} -> {o:?}"))?;
        }
    }
    let raw = std::fs::read_to_string(fixture_path("responses.json")).unwrap();
    let cases: Vec<ResponseCase> = serde_json::from_str(&raw).unwrap();
    for c in &cases {
        let pres = presentation(&c.permutation);
        let o = parse_choice(&c.text, c.permutation.len(), &pres, &markers);
        ensure(
            o.kind == c.kind && o.level == c.level && o.partial_refusal == c.partial_refusal,
            format!("{:?} -> {o:?}", c.text),
        )?;
    }
    Ok(format!(
        "{checked} (letter, permutation) responses for L in {{3, 5}} plus {} fixture responses",
        cases.len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("readability oracle", readability_oracle),
        ("readability correlation", readability_correlation),
        ("normalization exactness", normalization_exactness),
        ("forced two-member values", forced_two_member),
        ("Friedman correctness", friedman_correctness),
        ("chi-square accuracy", chi_square_accuracy),
        ("end-to-end bias recovery", bias_recovery),
        ("refusal handling", refusal_handling),
        ("bootstrap calibration", bootstrap_calibration),
        ("determinism and replay", determinism_and_replay),
        ("parsing exhaustiveness", parsing_exhaustive),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
