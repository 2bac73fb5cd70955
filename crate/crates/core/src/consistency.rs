//! Top-down consistency: per-group variances, optimal parent/child group matching,
//! inverse-variance merging and back-substitution.

use std::fmt;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, NodeEstimate};
use crate::hierarchy::HierarchyTree;
use crate::hist::{CountHistogram, SizeBound, UnattributedHistogram};
use crate::isotonic::{partition_sizes, IsotonicFit};
use crate::noise::{split_budget, PrivacyBudget, SeededRng};

/// Per-group variance estimates aligned with a node's `Ĥ_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupVariance(pub Vec<f64>);

impl GroupVariance {
    pub fn vars(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `2 / (|S_i| eps^2)` where `S_i` is the level set of the isotonic fit containing `i`.
pub fn variance_hg(fit: &IsotonicFit, eps: PrivacyBudget) -> GroupVariance {
    let e2 = eps.epsilon() * eps.epsilon();
    GroupVariance(partition_sizes(fit).into_iter().map(|s| 2.0 / (s as f64 * e2)).collect())
}

fn variance_by_count(hat_h: &CountHistogram, numerator: f64) -> GroupVariance {
    let mut vars = Vec::with_capacity(hat_h.total() as usize);
    for &c in hat_h.counts() {
        if c > 0 {
            vars.extend(std::iter::repeat_n(numerator / c as f64, c as usize));
        }
    }
    GroupVariance(vars)
}

/// `4 / (eps^2 Ĥ[s])` for every estimated group of size `s`.
pub fn variance_hc(hat_h: &CountHistogram, eps: PrivacyBudget) -> GroupVariance {
    variance_by_count(hat_h, 4.0 / (eps.epsilon() * eps.epsilon()))
}

/// Naive-estimator analogue of [`variance_hc`]: one noisy count cell with scale `2/eps`,
/// shared by the `Ĥ[s]` groups of size `s`.
pub fn variance_naive(hat_h: &CountHistogram, eps: PrivacyBudget) -> GroupVariance {
    variance_by_count(hat_h, 8.0 / (eps.epsilon() * eps.epsilon()))
}

/// Variance estimate matching the estimator that produced `est`.
pub fn estimate_variance(est: &NodeEstimate) -> GroupVariance {
    match est.kind {
        EstimatorKind::Hg => match &est.fit {
            Some(fit) => variance_hg(fit, est.eps_used),
            None => variance_hc(&est.hat_h, est.eps_used),
        },
        EstimatorKind::HcL1 | EstimatorKind::HcL2 => variance_hc(&est.hat_h, est.eps_used),
        EstimatorKind::Naive => variance_naive(&est.hat_h, est.eps_used),
    }
}

/// Perfect matching from parent groups to child groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// `assignment[i] = (c, j)`: parent group `i` is matched to group `j` of child `c`,
    /// where `c` is the position in the children slice.
    pub assignment: Vec<(u32, u32)>,
    pub cost: u64,
}

/// Splits `r` across children proportionally to `counts` using largest remainders,
/// lower index first on ties.
pub fn proportional_assign(counts: &[u64], r: u64) -> Result<Vec<u64>> {
    let total: u64 = counts.iter().sum();
    if r > total {
        return Err(Error::InfeasibleAllocation { requested: r, available: total });
    }
    if r == total {
        return Ok(counts.to_vec());
    }
    let total = total as u128;
    let mut out = Vec::with_capacity(counts.len());
    let mut rems = Vec::with_capacity(counts.len());
    for &c in counts {
        let num = c as u128 * r as u128;
        out.push((num / total) as u64);
        rems.push(num % total);
    }
    let left = r - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().take(left as usize) {
        out[i] += 1;
    }
    Ok(out)
}

/// Remaining groups of one child within the current child tier.
struct Run {
    child: u32,
    start: usize,
    end: usize,
}

/// Optimal matching of sorted parent sizes to the pooled sorted child sizes.
///
/// Parents and children are consumed in tiers of equal size. When the parent tier is
/// at least as large as the child tier, the whole child tier is matched in (child,
/// index) order; otherwise the parent tier is split across the children of the tier
/// in proportion to their remaining groups. O(G log G).
pub fn match_groups(parent: &[u64], children: &[&[u64]]) -> Result<Matching> {
    let n_children: u64 = children.iter().map(|c| c.len() as u64).sum();
    if parent.len() as u64 != n_children {
        return Err(Error::TotalMismatch { left: parent.len() as u64, right: n_children });
    }
    debug_assert!(parent.windows(2).all(|w| w[0] <= w[1]));
    let n = parent.len();

    let mut pool: Vec<(u64, u32, u32)> = Vec::with_capacity(n);
    for (c, sizes) in children.iter().enumerate() {
        debug_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        pool.extend(sizes.iter().enumerate().map(|(j, &s)| (s, c as u32, j as u32)));
    }
    pool.sort_unstable();

    let mut parent_end = vec![n; n];
    for i in (0..n.saturating_sub(1)).rev() {
        parent_end[i] = if parent[i] == parent[i + 1] { parent_end[i + 1] } else { i + 1 };
    }

    let mut assignment = vec![(0u32, 0u32); n];
    let mut cost = 0u64;
    let mut p = 0;
    let mut b = 0;
    let mut runs: Vec<Run> = Vec::new();
    let mut tier_size = 0u64;
    while p < n {
        if runs.is_empty() {
            tier_size = pool[b].0;
            let mut e = b;
            while e < n && pool[e].0 == tier_size {
                if runs.last().is_none_or(|r: &Run| r.child != pool[e].1) {
                    runs.push(Run { child: pool[e].1, start: e, end: e });
                }
                runs.last_mut().unwrap().end = e + 1;
                e += 1;
            }
            b = e;
        }
        let s_t = parent[p];
        let gt = (parent_end[p] - p) as u64;
        let gb: u64 = runs.iter().map(|r| (r.end - r.start) as u64).sum();
        let d = s_t.abs_diff(tier_size);
        if gt >= gb {
            for run in runs.drain(..) {
                for &(_, c, j) in &pool[run.start..run.end] {
                    assignment[p] = (c, j);
                    cost += d;
                    p += 1;
                }
            }
        } else {
            let counts: Vec<u64> = runs.iter().map(|r| (r.end - r.start) as u64).collect();
            let alloc = proportional_assign(&counts, gt)?;
            for (run, take) in runs.iter_mut().zip(alloc) {
                for &(_, c, j) in &pool[run.start..run.start + take as usize] {
                    assignment[p] = (c, j);
                    cost += d;
                    p += 1;
                }
                run.start += take as usize;
            }
            runs.retain(|r| r.start < r.end);
        }
    }
    Ok(Matching { assignment, cost })
}

/// Inverse-variance weighted combination of two estimates of the same quantity.
pub fn merge_estimates(x_parent: f64, v_parent: f64, x_child: f64, v_child: f64) -> Result<(f64, f64)> {
    for v in [v_parent, v_child] {
        if !(v > 0.0) {
            return Err(Error::NonPositiveVariance(v));
        }
    }
    if v_parent.is_infinite() {
        return Ok((x_child, v_child));
    }
    if v_child.is_infinite() {
        return Ok((x_parent, v_parent));
    }
    let wp = 1.0 / v_parent;
    let wc = 1.0 / v_child;
    Ok(((x_parent * wp + x_child * wc) / (wp + wc), 1.0 / (wp + wc)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeRule {
    #[default]
    Weighted,
    #[serde(alias = "plain_average", alias = "plain")]
    PlainAverage,
}

impl MergeRule {
    pub fn merge(self, xp: f64, vp: f64, xc: f64, vc: f64) -> Result<(f64, f64)> {
        match self {
            MergeRule::Weighted => merge_estimates(xp, vp, xc, vc),
            MergeRule::PlainAverage => {
                if !(vp > 0.0) {
                    return Err(Error::NonPositiveVariance(vp));
                }
                if !(vc > 0.0) {
                    return Err(Error::NonPositiveVariance(vc));
                }
                Ok(((xp + xc) / 2.0, (vp + vc) / 4.0))
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MergeRule::Weighted => "weighted",
            MergeRule::PlainAverage => "plain-average",
        }
    }
}

impl fmt::Display for MergeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MergeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(MergeRule::Weighted),
            "plain-average" | "plain_average" | "plain" => Ok(MergeRule::PlainAverage),
            other => Err(Error::Config(format!("unknown merge rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopDownConfig {
    pub level_budgets: Vec<PrivacyBudget>,
    pub kinds: Vec<EstimatorKind>,
    pub bound: SizeBound,
    pub merge: MergeRule,
}

impl TopDownConfig {
    /// Even split of `total` over `kinds.len()` levels with weighted merging.
    pub fn uniform(total: PrivacyBudget, kinds: Vec<EstimatorKind>, bound: SizeBound) -> Result<Self> {
        let level_budgets = split_budget(total, kinds.len())?;
        Ok(Self { level_budgets, kinds, bound, merge: MergeRule::Weighted })
    }
}

/// Per-level summary of the top-down sweep (level is the parent level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub parents: usize,
    pub match_cost: u64,
    pub merged_groups: u64,
    pub mean_parent_variance: f64,
    pub mean_child_variance: f64,
    pub mean_merged_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentResult {
    /// Released histogram per node, indexed like the tree.
    pub released: Vec<CountHistogram>,
    /// Independent per-node estimates before the consistency sweep.
    pub initial: Vec<CountHistogram>,
    /// Budget spent at each level (zero for levels that are never queried).
    pub level_budgets: Vec<f64>,
    pub diagnostics: Vec<LevelDiagnostics>,
}

impl ConsistentResult {
    /// Sequential composition over levels; siblings compose in parallel.
    pub fn total_epsilon(&self) -> f64 {
        self.level_budgets.iter().sum()
    }
}

fn check_levels(tree: &HierarchyTree, levels: usize, what: &str) -> Result<()> {
    if levels != tree.depth() {
        return Err(Error::Config(format!("{what} lists {levels} levels, hierarchy has {}", tree.depth())));
    }
    Ok(())
}

fn estimate_all(
    tree: &HierarchyTree,
    nodes: &[usize],
    kind_of: impl Fn(usize) -> (EstimatorKind, PrivacyBudget) + Sync,
    bound: SizeBound,
    rng: &SeededRng,
) -> Result<Vec<(usize, NodeEstimate)>> {
    nodes
        .par_iter()
        .map(|&i| {
            let (kind, eps) = kind_of(i);
            let mut node_rng = rng.derive(i as u64);
            estimate(kind, &tree.node(i).hist, bound, eps, &mut node_rng).map(|e| (i, e))
        })
        .collect()
}

fn all_estimates(tree: &HierarchyTree, cfg: &TopDownConfig, rng: &SeededRng) -> Result<Vec<NodeEstimate>> {
    tree.validate()?;
    check_levels(tree, cfg.kinds.len(), "estimator list")?;
    check_levels(tree, cfg.level_budgets.len(), "budget list")?;
    let all: Vec<usize> = (0..tree.len()).collect();
    let est = estimate_all(
        tree,
        &all,
        |i| {
            let l = tree.node(i).level;
            (cfg.kinds[l], cfg.level_budgets[l])
        },
        cfg.bound,
        rng,
    )?;
    Ok(est.into_iter().map(|(_, e)| e).collect())
}

struct ChildUpdate {
    child: usize,
    sizes: Vec<u64>,
    vars: Vec<f64>,
}

struct ParentOutcome {
    updates: Vec<ChildUpdate>,
    cost: u64,
    parent_var: f64,
    child_var: f64,
    merged_var: f64,
}

fn update_children(
    tree: &HierarchyTree,
    parent: usize,
    parent_sizes: &[u64],
    parent_vars: &[f64],
    child_est: &[NodeEstimate],
    child_vars: &[GroupVariance],
    merge: MergeRule,
) -> Result<ParentOutcome> {
    let kids = &tree.node(parent).children;
    let sizes: Vec<&[u64]> = kids.iter().map(|&c| child_est[c].hat_hg.sizes()).collect();
    let matching = match_groups(parent_sizes, &sizes)?;

    let mut merged: Vec<Vec<(u64, f64)>> =
        kids.iter().map(|&c| vec![(0, 0.0); child_est[c].hat_hg.len()]).collect();
    let (mut pv, mut cv, mut mv) = (0.0, 0.0, 0.0);
    for (i, &(c, j)) in matching.assignment.iter().enumerate() {
        let (c, j) = (c as usize, j as usize);
        let xc = sizes[c][j] as f64;
        let vc = child_vars[kids[c]].0[j];
        let (x, v) = merge.merge(parent_sizes[i] as f64, parent_vars[i], xc, vc)?;
        merged[c][j] = ((x + 0.5).floor().max(0.0) as u64, v);
        pv += parent_vars[i];
        cv += vc;
        mv += v;
    }
    let updates = kids
        .iter()
        .zip(merged)
        .map(|(&child, mut pairs)| {
            pairs.sort_by_key(|&(s, _)| s);
            let (sizes, vars) = pairs.into_iter().unzip();
            ChildUpdate { child, sizes, vars }
        })
        .collect();
    Ok(ParentOutcome { updates, cost: matching.cost, parent_var: pv, child_var: cv, merged_var: mv })
}

fn back_substitute(tree: &HierarchyTree, released: &mut [CountHistogram]) {
    for level in tree.levels().iter().rev().skip(1) {
        for &i in level {
            let mut sum = CountHistogram::default();
            for &c in &tree.node(i).children {
                sum.add_assign(&released[c]);
            }
            released[i] = sum;
        }
    }
}

/// Independent estimates at every level, then a root-to-leaf sweep that matches each
/// parent's groups to its children's, merges matched sizes and finally rebuilds every
/// internal node as the sum of its children.
pub fn top_down(tree: &HierarchyTree, cfg: &TopDownConfig, rng: &SeededRng) -> Result<ConsistentResult> {
    let est = all_estimates(tree, cfg, rng)?;
    let vars: Vec<GroupVariance> = est.iter().map(estimate_variance).collect();
    let initial: Vec<CountHistogram> = est.iter().map(|e| e.hat_h.clone()).collect();
    let level_budgets = cfg.level_budgets.iter().map(|b| b.epsilon()).collect();

    if tree.depth() == 1 {
        return Ok(ConsistentResult {
            released: initial.clone(),
            initial,
            level_budgets,
            diagnostics: Vec::new(),
        });
    }

    let mut cur_sizes: Vec<Vec<u64>> = vec![Vec::new(); tree.len()];
    let mut cur_vars: Vec<Vec<f64>> = vec![Vec::new(); tree.len()];
    cur_sizes[0] = est[0].hat_hg.sizes().to_vec();
    cur_vars[0] = vars[0].0.clone();

    let mut diagnostics = Vec::with_capacity(tree.depth() - 1);
    for level in 0..tree.depth() - 1 {
        let outcomes: Vec<ParentOutcome> = tree
            .level(level)
            .par_iter()
            .map(|&p| update_children(tree, p, &cur_sizes[p], &cur_vars[p], &est, &vars, cfg.merge))
            .collect::<Result<_>>()?;
        let mut diag = LevelDiagnostics {
            level,
            parents: outcomes.len(),
            match_cost: 0,
            merged_groups: 0,
            mean_parent_variance: 0.0,
            mean_child_variance: 0.0,
            mean_merged_variance: 0.0,
        };
        for out in outcomes {
            diag.match_cost += out.cost;
            diag.mean_parent_variance += out.parent_var;
            diag.mean_child_variance += out.child_var;
            diag.mean_merged_variance += out.merged_var;
            for u in out.updates {
                diag.merged_groups += u.sizes.len() as u64;
                cur_sizes[u.child] = u.sizes;
                cur_vars[u.child] = u.vars;
            }
        }
        if diag.merged_groups > 0 {
            let m = diag.merged_groups as f64;
            diag.mean_parent_variance /= m;
            diag.mean_child_variance /= m;
            diag.mean_merged_variance /= m;
        }
        debug!(
            "level {level}: {} parents, match cost {}, {} groups merged, mean variance parent {:.4} child {:.4} merged {:.4}",
            diag.parents,
            diag.match_cost,
            diag.merged_groups,
            diag.mean_parent_variance,
            diag.mean_child_variance,
            diag.mean_merged_variance
        );
        diagnostics.push(diag);
    }

    let mut released = vec![CountHistogram::default(); tree.len()];
    for &leaf in tree.leaves() {
        let sizes = std::mem::take(&mut cur_sizes[leaf]);
        released[leaf] = UnattributedHistogram::from_sorted_unchecked(sizes).to_counts();
    }
    back_substitute(tree, &mut released);
    Ok(ConsistentResult { released, initial, level_budgets, diagnostics })
}

/// Whole budget at the leaves; internal nodes are sums of their children.
pub fn bottom_up(
    tree: &HierarchyTree,
    eps: PrivacyBudget,
    kind: EstimatorKind,
    bound: SizeBound,
    rng: &SeededRng,
) -> Result<ConsistentResult> {
    tree.validate()?;
    let est = estimate_all(tree, tree.leaves(), |_| (kind, eps), bound, rng)?;
    let mut released = vec![CountHistogram::default(); tree.len()];
    for (i, e) in est {
        released[i] = e.hat_h;
    }
    let initial = released.clone();
    back_substitute(tree, &mut released);
    let mut level_budgets = vec![0.0; tree.depth()];
    *level_budgets.last_mut().unwrap() = eps.epsilon();
    Ok(ConsistentResult { released, initial, level_budgets, diagnostics: Vec::new() })
}

/// Per-node estimates with no consistency step.
pub fn independent(tree: &HierarchyTree, cfg: &TopDownConfig, rng: &SeededRng) -> Result<ConsistentResult> {
    let est = all_estimates(tree, cfg, rng)?;
    let released: Vec<CountHistogram> = est.into_iter().map(|e| e.hat_h).collect();
    Ok(ConsistentResult {
        initial: released.clone(),
        released,
        level_budgets: cfg.level_budgets.iter().map(|b| b.epsilon()).collect(),
        diagnostics: Vec::new(),
    })
}

/// A released cell as read back for auditing.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i128),
    NonInteger(String),
}

impl Cell {
    pub fn parse(s: &str) -> Self {
        s.trim().parse::<i128>().map(Cell::Int).unwrap_or_else(|_| Cell::NonInteger(s.to_string()))
    }
}

/// One node of a released hierarchy, independent of how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditNode {
    pub id: String,
    pub parent: Option<usize>,
    pub groups: u64,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    Integrality { node: String, size: usize, value: String },
    Nonnegativity { node: String, size: usize, value: i128 },
    GroupSize { node: String, expected: u64, actual: i128 },
    Consistency { node: String, size: usize, parent: i128, children: i128 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Integrality { node, size, value } => {
                write!(f, "integrality: node {node} size {size}: `{value}` is not an integer")
            }
            Violation::Nonnegativity { node, size, value } => {
                write!(f, "nonnegativity: node {node} size {size}: {value} < 0")
            }
            Violation::GroupSize { node, expected, actual } => {
                write!(f, "group size: node {node}: histogram totals {actual}, expected {expected}")
            }
            Violation::Consistency { node, size, parent, children } => {
                write!(f, "consistency: node {node} size {size}: {parent} != {children} (sum of children)")
            }
        }
    }
}

/// Checks integrality, nonnegativity, the group total and parent = sum of children at
/// every node and size.
pub fn audit(nodes: &[AuditNode]) -> Vec<Violation> {
    let mut out = Vec::new();
    let value = |c: &Cell| match c {
        Cell::Int(v) => *v,
        Cell::NonInteger(_) => 0,
    };
    for node in nodes {
        for (size, cell) in node.cells.iter().enumerate() {
            match cell {
                Cell::NonInteger(s) => {
                    out.push(Violation::Integrality { node: node.id.clone(), size, value: s.clone() })
                }
                Cell::Int(v) if *v < 0 => {
                    out.push(Violation::Nonnegativity { node: node.id.clone(), size, value: *v })
                }
                Cell::Int(_) => {}
            }
        }
        let total: i128 = node.cells.iter().map(value).sum();
        if total != node.groups as i128 {
            out.push(Violation::GroupSize { node: node.id.clone(), expected: node.groups, actual: total });
        }
    }
    let mut sums: Vec<Option<Vec<i128>>> = vec![None; nodes.len()];
    for node in nodes {
        if let Some(p) = node.parent {
            let acc = sums[p].get_or_insert_with(Vec::new);
            if acc.len() < node.cells.len() {
                acc.resize(node.cells.len(), 0);
            }
            for (a, c) in acc.iter_mut().zip(&node.cells) {
                *a += value(c);
            }
        }
    }
    for (node, sum) in nodes.iter().zip(sums) {
        let Some(sum) = sum else { continue };
        let len = sum.len().max(node.cells.len());
        for size in 0..len {
            let lhs = node.cells.get(size).map(value).unwrap_or(0);
            let rhs = sum.get(size).copied().unwrap_or(0);
            if lhs != rhs {
                out.push(Violation::Consistency { node: node.id.clone(), size, parent: lhs, children: rhs });
            }
        }
    }
    out
}

/// Audits a released hierarchy against the public group totals of `tree`.
pub fn check_consistency(result: &ConsistentResult, tree: &HierarchyTree) -> Vec<Violation> {
    let nodes: Vec<AuditNode> = tree
        .nodes()
        .iter()
        .zip(&result.released)
        .map(|(n, h)| AuditNode {
            id: n.id.clone(),
            parent: n.parent,
            groups: n.groups,
            cells: h.counts().iter().map(|&v| Cell::Int(v as i128)).collect(),
        })
        .collect();
    let mut out = audit(&nodes);
    if result.released.len() != tree.len() {
        out.push(Violation::GroupSize {
            node: format!("<{} nodes released for {}>", result.released.len(), tree.len()),
            expected: tree.len() as u64,
            actual: result.released.len() as i128,
        });
    }
    out
}
