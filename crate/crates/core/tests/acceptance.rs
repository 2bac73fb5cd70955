//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process exits
//! nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use coc_hist::bench::{
    omniscient_error, run_pipeline, run_trials, Algorithm, BoundSpec, Budget, PipelineSpec,
};
use coc_hist::consistency::{check_consistency, match_groups, MergeRule};
use coc_hist::data::{synthetic_tree, SynthParams};
use coc_hist::estimators::{estimate, estimate_hg, EstimatorKind};
use coc_hist::hierarchy::HierarchyTree;
use coc_hist::hist::{emd, CountHistogram, SizeBound, UnattributedHistogram};
use coc_hist::isotonic::{
    isotonic_constrained, isotonic_l1, isotonic_l2, isotonic_l2_uniform, l1_objective, l2_objective, Norm,
};
use coc_hist::noise::{sample_double_geometric, NoiseScale, PrivacyBudget, SeededRng};
use rand::seq::index::sample;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;

fn eps(e: f64) -> PrivacyBudget {
    PrivacyBudget::new(e).unwrap()
}

fn bound(k: u64) -> SizeBound {
    SizeBound::new(k).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// One-sided Welch t-test of `mean(a) > mean(b)`; returns (t, p).
fn welch_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_var(a) / na, sample_var(b) / nb);
    let se = (va + vb).sqrt();
    let t = (mean(a) - mean(b)) / se;
    if se == 0.0 {
        let p = if mean(a) > mean(b) { 0.0 } else { 1.0 };
        return (t, p);
    }
    let df = (va + vb).powi(2) / (va.powi(2) / (na - 1.0) + vb.powi(2) / (nb - 1.0));
    let p = 1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t);
    (t, p)
}

fn spec(
    budget: Budget,
    kinds: Vec<EstimatorKind>,
    algorithm: Algorithm,
    merge: MergeRule,
    k: u64,
) -> PipelineSpec {
    PipelineSpec {
        budget,
        kinds,
        algorithm,
        merge,
        bound: BoundSpec::Fixed(bound(k)),
        bound_epsilon: eps(1e-4),
    }
}

/// Per-trial mean EMD at every level, 10 seeded trials.
fn trial_errors(tree: &HierarchyTree, spec: &PipelineSpec, base_seed: u64) -> Vec<Vec<f64>> {
    let report = run_trials(tree, spec, base_seed, 10).unwrap();
    report.levels.iter().map(|l| l.trials.iter().map(|t| t.mean_emd).collect()).collect()
}

fn random_kind<R: Rng>(rng: &mut R) -> EstimatorKind {
    [EstimatorKind::Naive, EstimatorKind::Hg, EstimatorKind::HcL1, EstimatorKind::HcL2]
        [rng.random_range(0..4)]
}

/// Random hierarchy: 1 to 3 levels, fanout up to 8, up to 10^4 groups in total.
fn random_tree<R: Rng>(rng: &mut R) -> HierarchyTree {
    let depth = rng.random_range(1..=3usize);
    let fanouts: Vec<usize> = (1..depth).map(|_| rng.random_range(1..=8)).collect();
    let leaves: usize = fanouts.iter().product();
    let total_groups = rng.random_range(1..=10_000usize);
    let mut paths = vec![vec!["root".to_string()]];
    for (l, &f) in fanouts.iter().enumerate() {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..f).map(move |c| {
                    let mut q = p.clone();
                    q.push(format!("n{l}_{c}"));
                    q
                })
            })
            .collect();
    }
    let heavy = rng.random_bool(0.5);
    let out: Vec<(Vec<String>, CountHistogram)> = paths
        .into_iter()
        .map(|p| {
            let g = (total_groups / leaves).max(rng.random_range(0..3));
            let sizes = (0..g).map(|_| {
                if heavy && rng.random_bool(0.01) {
                    rng.random_range(20..2000)
                } else {
                    rng.random_range(0..8u64).min(rng.random_range(0..8))
                }
            });
            (p, CountHistogram::from_sizes(sizes))
        })
        .collect();
    HierarchyTree::from_leaves(out).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(101);
    let mut violations = 0;
    let mut largest = 0;
    for run in 0..200u64 {
        let tree = random_tree(&mut rng);
        largest = largest.max(tree.root().groups);
        let depth = tree.depth();
        let max = tree.root().hist.max_size().unwrap_or(0);
        let algorithm = if rng.random_bool(0.8) { Algorithm::TopDown } else { Algorithm::BottomUp };
        let k = match rng.random_range(0..4) {
            0 => BoundSpec::Auto,
            1 => BoundSpec::Fixed(bound((max / 2).max(1))),
            2 => BoundSpec::Fixed(bound(max.max(1))),
            _ => BoundSpec::Fixed(bound(max + rng.random_range(1..500))),
        };
        let total = 10f64.powf(rng.random_range(-1.5..1.0));
        let budget = if rng.random_bool(0.5) {
            Budget::Total(eps(total))
        } else {
            Budget::PerLevel((0..depth).map(|_| eps(10f64.powf(rng.random_range(-2.0..1.0)))).collect())
        };
        let s = PipelineSpec {
            budget,
            kinds: (0..depth).map(|_| random_kind(&mut rng)).collect(),
            algorithm,
            merge: if rng.random_bool(0.7) { MergeRule::Weighted } else { MergeRule::PlainAverage },
            bound: k,
            bound_epsilon: eps(1e-4),
        };
        let out =
            run_pipeline(&tree, &s, rng.random()).map_err(|e| format!("run {run} failed: {e} ({s:?})"))?;
        let v = check_consistency(&out.result, &tree);
        if let Some(first) = v.first() {
            eprintln!("run {run}: {} violations, first: {first}", v.len());
        }
        violations += v.len();
    }
    let elapsed = start.elapsed();
    ensure(violations == 0, || format!("{violations} violations"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("200 runs, 0 violations, largest tree {largest} groups, {:.1}s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(202);
    for inst in 0..500 {
        let n = rng.random_range(1..=40usize);
        let spread = if rng.random_bool(0.5) { 6 } else { 60 };
        let n_children = rng.random_range(1..=6usize);
        let mut children: Vec<Vec<u64>> = vec![Vec::new(); n_children];
        for _ in 0..n {
            children[rng.random_range(0..n_children)].push(rng.random_range(0..spread));
        }
        for c in &mut children {
            c.sort_unstable();
        }
        let mut parent: Vec<u64> = (0..n).map(|_| rng.random_range(0..spread)).collect();
        parent.sort_unstable();
        let refs: Vec<&[u64]> = children.iter().map(Vec::as_slice).collect();
        let m = match_groups(&parent, &refs).map_err(|e| e.to_string())?;
        ensure(common::is_bijection(&children, &m.assignment), || {
            format!("instance {inst}: not a bijection")
        })?;
        let oracle = common::matching_oracle(&parent, &children);
        ensure(
            m.cost as i64 == oracle && common::matching_cost(&parent, &children, &m.assignment) == m.cost,
            || format!("instance {inst}: cost {} vs oracle {oracle}", m.cost),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("500 instances equal to the Hungarian optimum, {:.2}s", elapsed.as_secs_f64()))
}

fn criterion_3() -> Outcome {
    let worked = isotonic_l2_uniform(&[0.0, 4.0, 2.0, 4.0, 5.0, 3.0]);
    ensure(worked.values() == [0.0, 3.0, 3.0, 4.0, 4.0, 4.0], || {
        format!("worked instance gave {:?}", worked.values())
    })?;
    let mut rng = SeededRng::new(303);
    let mut worst: f64 = 0.0;
    for inst in 0..500 {
        let n = rng.random_range(1..=12usize);
        let integral = rng.random_bool(0.5);
        let y: Vec<f64> = (0..n)
            .map(|_| {
                let v = rng.random_range(-10.0..30.0f64);
                if integral {
                    v.round()
                } else {
                    v
                }
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let last = f64::from(rng.random_range(0..25u32));
        let inf = f64::INFINITY;

        let mut gaps = Vec::new();
        let fit = isotonic_l2(&y, &w);
        gaps.push((
            "l2",
            l2_objective(&y, &w, fit.values()) - common::l2_partition_oracle(&y, &w, -inf, inf),
        ));
        let fit = isotonic_l1(&y);
        gaps.push(("l1", l1_objective(&y, fit.values()) - common::l1_dp_oracle(&y, -inf, inf)));
        let fit = isotonic_constrained(&y, Norm::L2, 0.0, last).unwrap();
        let unit = vec![1.0; n];
        gaps.push((
            "constrained l2",
            l2_objective(&y, &unit, fit.values()) - common::constrained_oracle(&y, false, 0.0, last),
        ));
        let fit = isotonic_constrained(&y, Norm::L1, 0.0, last).unwrap();
        gaps.push((
            "constrained l1",
            l1_objective(&y, fit.values()) - common::constrained_oracle(&y, true, 0.0, last),
        ));
        for (name, gap) in gaps {
            worst = worst.max(gap.abs());
            ensure(gap.abs() <= 1e-9, || format!("instance {inst} ({name}): gap {gap:e}, y = {y:?}"))?;
        }
    }
    Ok(format!("500 instances x 4 fits, max objective gap {worst:.1e}; worked instance exact"))
}

fn criterion_4() -> Outcome {
    let h = CountHistogram::new(vec![0, 100, 0, 0, 0, 0]);
    let d1 = emd(&h, &CountHistogram::new(vec![0, 0, 100, 0, 0, 0, 0])).map_err(|e| e.to_string())?;
    let d2 = emd(&h, &CountHistogram::new(vec![0, 0, 0, 0, 0, 100])).map_err(|e| e.to_string())?;
    ensure(d1 == 100 && d2 == 400, || format!("worked pair gave {d1} and {d2}"))?;
    let mut rng = SeededRng::new(404);
    for inst in 0..500 {
        let groups = rng.random_range(1..=20u64);
        let draw = |rng: &mut SeededRng| {
            let buckets = rng.random_range(1..=8usize);
            let mut c = vec![0u64; buckets];
            for _ in 0..groups {
                c[rng.random_range(0..buckets)] += 1;
            }
            c
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let d = emd(&CountHistogram::new(a.clone()), &CountHistogram::new(b.clone()))
            .map_err(|e| e.to_string())?;
        let oracle = common::emd_transport(&a, &b);
        ensure(d as i64 == oracle, || format!("instance {inst}: {d} vs min-cost flow {oracle}"))?;
    }
    Ok("500 instances equal to min-cost flow; worked pair 100 and 400".into())
}

fn l1_diff(a: &[u64], b: &[u64]) -> u64 {
    let n = a.len().max(b.len());
    (0..n).map(|i| a.get(i).copied().unwrap_or(0).abs_diff(b.get(i).copied().unwrap_or(0))).sum()
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(505);
    let (mut max_c, mut max_g, mut max_h) = (0, 0, 0);
    let mut neighbours = 0;
    for _ in 0..100 {
        let g = rng.random_range(1..=6usize);
        let sizes: Vec<u64> = (0..g).map(|_| rng.random_range(0..=6)).collect();
        let k = bound(rng.random_range(1..=8));
        let forms = |sizes: &[u64]| {
            let h = CountHistogram::from_sizes(sizes.iter().copied());
            let t = h.truncate_extend(k);
            (t.to_cumulative().csums().to_vec(), h.to_unattributed().into_sizes(), t.into_counts())
        };
        let base = forms(&sizes);
        for i in 0..g {
            for delta in [1i64, -1] {
                if delta < 0 && sizes[i] == 0 {
                    continue;
                }
                let mut n = sizes.clone();
                n[i] = (n[i] as i64 + delta) as u64;
                let other = forms(&n);
                neighbours += 1;
                max_c = max_c.max(l1_diff(&base.0, &other.0));
                max_g = max_g.max(l1_diff(&base.1, &other.1));
                max_h = max_h.max(l1_diff(&base.2, &other.2));
            }
        }
    }
    ensure((max_c, max_g, max_h) == (1, 1, 2), || {
        format!("max L1 changes: cumulative {max_c}, unattributed {max_g}, count {max_h}")
    })?;
    Ok(format!("{neighbours} neighbours; max changes 1/1/2, each attained"))
}

fn criterion_6() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let mut lines = Vec::new();
    for (i, &e) in [0.1, 1.0, 2.0].iter().enumerate() {
        let scale = NoiseScale::for_sensitivity(1.0, eps(e));
        let mut rng = SeededRng::new(600 + i as u64);
        let draws: Vec<i64> = (0..DRAWS).map(|_| sample_double_geometric(scale, &mut rng)).collect();

        let alpha = (-e).exp();
        let pmf = |k: i64| (1.0 - alpha) / (1.0 + alpha) * alpha.powi(k.unsigned_abs() as i32);
        let tail = |m: i64| alpha.powi((m + 1) as i32) / (1.0 + alpha);
        let n = DRAWS as f64;
        let mut m = 0i64;
        while n * tail(m + 1) >= 5.0 {
            m += 1;
        }
        let idx = |x: i64| (x.clamp(-m - 1, m + 1) + m + 1) as usize;
        let mut observed = vec![0f64; (2 * m + 3) as usize];
        for &x in &draws {
            observed[idx(x)] += 1.0;
        }
        let expected: Vec<f64> = (-m - 1..=m + 1)
            .map(|k| if k.abs() == m + 1 { tail(m) } else { pmf(k) })
            .map(|p| p * n)
            .collect();
        let stat: f64 = observed.iter().zip(&expected).map(|(o, x)| (o - x).powi(2) / x).sum();
        let df = (observed.len() - 1) as f64;
        let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);

        let xs: Vec<f64> = draws.iter().map(|&x| x as f64).collect();
        let var = sample_var(&xs);
        let want = 2.0 * alpha / (1.0 - alpha).powi(2);
        let rel = (var - want).abs() / want;
        ensure(p >= 0.001 && rel <= 0.02, || {
            format!("eps {e}: chi2 {stat:.1} (df {df}), p {p:.2e}, variance {var:.3} vs {want:.3}")
        })?;
        lines.push(format!("eps {e}: p {p:.3}, var err {:.2}%", rel * 100.0));
    }
    Ok(lines.join("; "))
}

/// One node with about 10^3 occupied sizes below 10^4.
fn sparse_histogram() -> CountHistogram {
    let mut rng = SeededRng::new(707);
    let mut counts = vec![0u64; 10_000];
    for (s, c) in [5340, 6720, 3160, 2680, 1240, 500, 360].into_iter().enumerate() {
        counts[s + 1] = c;
    }
    for s in sample(&mut rng, 10_000 - 8, 993) {
        counts[s + 8] = rng.random_range(1..=3);
    }
    CountHistogram::new(counts)
}

fn criterion_7() -> Outcome {
    let h = sparse_histogram();
    let k = bound(10_000);
    let run = |kind: EstimatorKind| -> Vec<f64> {
        (0..10u64)
            .map(|seed| {
                let est = estimate(kind, &h, k, eps(1.0), &mut SeededRng::new(seed)).unwrap();
                emd(&h, &est.hat_h).unwrap() as f64
            })
            .collect()
    };
    let (naive, hc) = (mean(&run(EstimatorKind::Naive)), mean(&run(EstimatorKind::HcL1)));
    let ratio = naive / hc;
    ensure(ratio >= 10.0, || format!("naive {naive:.0} vs Hc-L1 {hc:.0}, ratio {ratio:.1}"))?;
    Ok(format!("{} occupied sizes: naive {naive:.0}, Hc-L1 {hc:.1}, ratio {ratio:.0}x", h.distinct_sizes()))
}

fn criterion_8() -> Outcome {
    let tree = synthetic_tree(&SynthParams {
        states: 4,
        counties_per_state: 25,
        outliers_per_state: 1,
        seed: 8,
        ..SynthParams::default()
    })
    .unwrap();
    let kinds = vec![EstimatorKind::HcL1; 3];
    let mk = |alg| spec(Budget::Total(eps(1.0)), kinds.clone(), alg, MergeRule::Weighted, 100_000);
    let td = trial_errors(&tree, &mk(Algorithm::TopDown), 800);
    let bu = trial_errors(&tree, &mk(Algorithm::BottomUp), 800);
    let leaf = tree.depth() - 1;
    let (t_root, p_root) = welch_greater(&bu[0], &td[0]);
    let (t_leaf, p_leaf) = welch_greater(&td[leaf], &bu[leaf]);
    let summary = format!(
        "root BU {:.0} vs TD {:.0} (p {p_root:.1e}); leaf BU {:.1} vs TD {:.1} (p {p_leaf:.1e})",
        mean(&bu[0]),
        mean(&td[0]),
        mean(&bu[leaf]),
        mean(&td[leaf])
    );
    ensure(t_root > 0.0 && p_root < 0.05 && t_leaf > 0.0 && p_leaf < 0.05, || summary.clone())?;
    Ok(summary)
}

fn criterion_9() -> Outcome {
    let tree =
        synthetic_tree(&SynthParams { states: 20, counties_per_state: 0, seed: 9, ..SynthParams::default() })
            .unwrap();
    let mut parts = Vec::new();
    let mut failed = false;
    for (name, kinds) in [
        ("Hc x Hc", vec![EstimatorKind::HcL1, EstimatorKind::HcL1]),
        ("Hg x Hc", vec![EstimatorKind::Hg, EstimatorKind::HcL1]),
    ] {
        for e in [0.1, 0.5] {
            let mk = |merge| {
                spec(Budget::PerLevel(vec![eps(e); 2]), kinds.clone(), Algorithm::TopDown, merge, 100_000)
            };
            let w = trial_errors(&tree, &mk(MergeRule::Weighted), 900);
            let p = trial_errors(&tree, &mk(MergeRule::PlainAverage), 900);
            let (t, pv) = welch_greater(&p[0], &w[0]);
            failed |= !(t > 0.0 && pv < 0.05);
            parts.push(format!("{name} eps {e}: {:.0} vs {:.0} (p {pv:.1e})", mean(&w[0]), mean(&p[0])));
        }
    }
    let summary = format!("weighted vs plain top level: {}", parts.join("; "));
    ensure(!failed, || summary.clone())?;
    Ok(summary)
}

fn criterion_10() -> Outcome {
    let h = CountHistogram::from_sizes(1..=2352u64);
    let tree = HierarchyTree::single("national", h);
    let err = omniscient_error(&tree, &[eps(0.1)])[0];
    let rel = (err - 3.3e4).abs() / 3.3e4;
    ensure(rel <= 0.02, || format!("omniscient error {err:.0}"))?;
    Ok(format!("omniscient error {err:.0} ({:.2}% from 3.3e4)", rel * 100.0))
}

fn criterion_11() -> Outcome {
    const N: usize = 10_000_000;
    let mut rng = SeededRng::new(1111);
    let mut sizes: Vec<u64> = (0..N)
        .map(|_| if rng.random_bool(0.001) { rng.random_range(8..10_000) } else { rng.random_range(1..=7) })
        .collect();
    sizes.sort_unstable();
    let hg = UnattributedHistogram::new(sizes.clone()).unwrap();
    let start = Instant::now();
    let est = estimate_hg(&hg, eps(1.0), &mut SeededRng::new(1));
    let t_hg = start.elapsed();
    ensure(est.hat_hg.len() == N, || "estimate has the wrong length".into())?;

    let children: Vec<Vec<u64>> = (0..50)
        .map(|c| {
            let mut v: Vec<u64> =
                sizes.iter().skip(c).step_by(50).map(|&s| s + rng.random_range(0..2)).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let refs: Vec<&[u64]> = children.iter().map(Vec::as_slice).collect();
    let start = Instant::now();
    let m = match_groups(est.hat_hg.sizes(), &refs).map_err(|e| e.to_string())?;
    let t_match = start.elapsed();
    ensure(m.assignment.len() == N, || "matching has the wrong length".into())?;
    ensure(t_hg < Duration::from_secs(60) && t_match < Duration::from_secs(120), || {
        format!("estimate_hg {t_hg:?}, match_groups {t_match:?}")
    })?;
    Ok(format!(
        "10^7 groups: estimate_hg {:.2}s, match_groups {:.2}s",
        t_hg.as_secs_f64(),
        t_match.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("consistency of 200 randomized runs", criterion_1),
        ("matching optimality", criterion_2),
        ("isotonic oracles", criterion_3),
        ("EMD correctness", criterion_4),
        ("sensitivity bounds", criterion_5),
        ("noise distribution", criterion_6),
        ("naive ruled out", criterion_7),
        ("bottom-up vs top-down", criterion_8),
        ("weighted merge", criterion_9),
        ("omniscient anchor", criterion_10),
        ("performance", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|x| *x == (i + 1).to_string()) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {id} ({name}): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {id} ({name}): {detail}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
