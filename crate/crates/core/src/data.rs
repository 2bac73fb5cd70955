//! Entity/group/hierarchy tables, histogram construction and the synthetic housing
//! generator.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyTree;
use crate::hist::CountHistogram;
use crate::noise::SeededRng;

pub const ENTITIES_FILE: &str = "entities.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const HIERARCHY_FILE: &str = "hierarchy.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRow {
    pub entity_id: String,
    pub group_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRow {
    pub group_id: String,
    pub region_id: String,
}

/// A leaf region and its ancestors, root first; the last element names the leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionRow {
    pub region_id: String,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub entities: Vec<EntityRow>,
    pub groups: Vec<GroupRow>,
    pub hierarchy: Vec<RegionRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub groups: u64,
    pub people: u64,
    pub unique_sizes: u64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<File>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if got != want {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn records(path: &Path, rdr: &mut csv::Reader<File>, width: usize) -> Result<Vec<(u64, Vec<String>)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::MalformedRow { path: path.to_path_buf(), line, reason: e.to_string() }
        })?;
        let line = line_of(&rec);
        if rec.len() != width {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if let Some(i) = rec.iter().position(str::is_empty) {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("empty field {}", i + 1),
            });
        }
        out.push((line, rec.iter().map(String::from).collect()));
    }
    Ok(out)
}

/// Reads and validates the three tables.
pub fn load_tables(entities_path: &Path, groups_path: &Path, hierarchy_path: &Path) -> Result<Dataset> {
    let mut rdr = reader(hierarchy_path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let levels = header.len().saturating_sub(1);
    let mut want = vec!["region_id".to_string()];
    want.extend((0..levels).map(|l| format!("level_{l}")));
    if levels == 0 || header != want {
        return Err(Error::MalformedRow {
            path: hierarchy_path.to_path_buf(),
            line: 1,
            reason: format!("expected header `region_id,level_0,...`, found `{}`", header.join(",")),
        });
    }
    let mut regions: HashMap<String, usize> = HashMap::new();
    let mut hierarchy = Vec::new();
    for (line, mut fields) in records(hierarchy_path, &mut rdr, levels + 1)? {
        let region_id = fields.remove(0);
        if regions.insert(region_id.clone(), hierarchy.len()).is_some() {
            return Err(Error::DuplicateId { path: hierarchy_path.to_path_buf(), line, id: region_id });
        }
        hierarchy.push(RegionRow { region_id, path: fields });
    }

    let mut rdr = reader(groups_path)?;
    expect_header(groups_path, &mut rdr, &["group_id", "region_id"])?;
    let mut group_index: HashMap<String, usize> = HashMap::new();
    let mut groups = Vec::new();
    for (line, mut f) in records(groups_path, &mut rdr, 2)? {
        let region_id = f.pop().unwrap();
        let group_id = f.pop().unwrap();
        if !regions.contains_key(&region_id) {
            return Err(Error::MissingRegion { path: groups_path.to_path_buf(), line, region: region_id });
        }
        if group_index.insert(group_id.clone(), groups.len()).is_some() {
            return Err(Error::DuplicateId { path: groups_path.to_path_buf(), line, id: group_id });
        }
        groups.push(GroupRow { group_id, region_id });
    }

    let mut rdr = reader(entities_path)?;
    expect_header(entities_path, &mut rdr, &["entity_id", "group_id"])?;
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut entities = Vec::new();
    for (line, mut f) in records(entities_path, &mut rdr, 2)? {
        let group_id = f.pop().unwrap();
        let entity_id = f.pop().unwrap();
        if !group_index.contains_key(&group_id) {
            return Err(Error::MissingGroup { path: entities_path.to_path_buf(), line, group: group_id });
        }
        if seen.insert(entity_id.clone(), ()).is_some() {
            return Err(Error::DuplicateId { path: entities_path.to_path_buf(), line, id: entity_id });
        }
        entities.push(EntityRow { entity_id, group_id });
    }
    Ok(Dataset { entities, groups, hierarchy })
}

/// Loads `entities.csv`, `groups.csv` and `hierarchy.csv` from `dir`.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    load_tables(&dir.join(ENTITIES_FILE), &dir.join(GROUPS_FILE), &dir.join(HIERARCHY_FILE))
}

pub fn write_tables(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let levels = ds.hierarchy.first().map_or(1, |r| r.path.len());
    let mut w = csv::Writer::from_path(dir.join(HIERARCHY_FILE))?;
    let mut header = vec!["region_id".to_string()];
    header.extend((0..levels).map(|l| format!("level_{l}")));
    w.write_record(&header)?;
    for r in &ds.hierarchy {
        w.write_record(std::iter::once(&r.region_id).chain(&r.path))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(GROUPS_FILE))?;
    w.write_record(["group_id", "region_id"])?;
    for g in &ds.groups {
        w.write_record([&g.group_id, &g.region_id])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(ENTITIES_FILE))?;
    w.write_record(["entity_id", "group_id"])?;
    for e in &ds.entities {
        w.write_record([&e.entity_id, &e.group_id])?;
    }
    w.flush()?;
    Ok(())
}

fn group_sizes(ds: &Dataset) -> Vec<u64> {
    let index: HashMap<&str, usize> =
        ds.groups.iter().enumerate().map(|(i, g)| (g.group_id.as_str(), i)).collect();
    let mut sizes = vec![0u64; ds.groups.len()];
    for e in &ds.entities {
        if let Some(&i) = index.get(e.group_id.as_str()) {
            sizes[i] += 1;
        }
    }
    sizes
}

/// True histogram of every region. Regions without groups are kept with an empty
/// histogram.
pub fn build_histograms(ds: &Dataset) -> Result<HierarchyTree> {
    let sizes = group_sizes(ds);
    let region_of: HashMap<&str, usize> =
        ds.hierarchy.iter().enumerate().map(|(i, r)| (r.region_id.as_str(), i)).collect();
    let mut hists = vec![CountHistogram::default(); ds.hierarchy.len()];
    let mut per_region: Vec<Vec<u64>> = vec![Vec::new(); ds.hierarchy.len()];
    for (g, &s) in ds.groups.iter().zip(&sizes) {
        let r = *region_of.get(g.region_id.as_str()).ok_or_else(|| {
            Error::Structure(format!("group `{}` has unknown region `{}`", g.group_id, g.region_id))
        })?;
        per_region[r].push(s);
    }
    for (h, s) in hists.iter_mut().zip(per_region) {
        *h = CountHistogram::from_sizes(s);
    }
    HierarchyTree::from_leaves(ds.hierarchy.iter().map(|r| r.path.clone()).zip(hists))
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let sizes = group_sizes(ds);
    let mut distinct = sizes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    DatasetStats {
        groups: ds.groups.len() as u64,
        people: ds.entities.len() as u64,
        unique_sizes: distinct.len() as u64,
    }
}

/// Parameters of the partially synthetic housing generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub states: usize,
    /// Zero gives a two-level hierarchy with states as leaves.
    pub counties_per_state: usize,
    /// Household counts for sizes 1 through 7 in a typical state.
    pub base_counts: Vec<u64>,
    /// Each state's base counts are scaled by a factor drawn from `1 ± state_spread`.
    pub state_spread: f64,
    /// Ratio between neighbouring tail sizes; defaults to `count(7) / count(6)`.
    pub tail_ratio: Option<f64>,
    pub outliers_per_state: u64,
    pub outlier_range: (u64, u64),
    /// Relative county weights; defaults to `1 / (c + 1)`.
    pub county_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            states: 5,
            counties_per_state: 4,
            base_counts: vec![5340, 6720, 3160, 2680, 1240, 500, 360],
            state_spread: 0.5,
            tail_ratio: None,
            outliers_per_state: 50,
            outlier_range: (1, 10_000),
            county_weights: None,
            seed: 0,
        }
    }
}

const TAIL_MAX_SIZE: u64 = 10_000;
const TAIL_MIN_EXPECTED: f64 = 1e-6;

/// Tail counts for sizes 8, 9, ...: each is binomial on its predecessor with success
/// probability `ratio`.
pub fn sample_tail<R: Rng + ?Sized>(count7: u64, ratio: f64, rng: &mut R) -> Result<Vec<u64>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::DegenerateRatio(format!("tail ratio {ratio} outside [0, 1)")));
    }
    let mut out = Vec::new();
    let mut prev = count7;
    let mut expected = count7 as f64;
    for _size in 8..=TAIL_MAX_SIZE {
        expected *= ratio;
        if prev == 0 || expected < TAIL_MIN_EXPECTED {
            break;
        }
        let c = Binomial::new(prev, ratio).expect("valid binomial").sample(rng);
        out.push(c);
        prev = c;
    }
    Ok(out)
}

struct SynthLayout {
    /// (region id, path) per leaf region.
    regions: Vec<(String, Vec<String>)>,
    /// (leaf region index, size) per group.
    groups: Vec<(usize, u64)>,
}

fn synth_layout(p: &SynthParams) -> Result<SynthLayout> {
    if p.base_counts.len() != 7 {
        return Err(Error::Config(format!("base_counts needs 7 entries, found {}", p.base_counts.len())));
    }
    if p.base_counts[5] == 0 {
        return Err(Error::DegenerateRatio("no households of size 6".into()));
    }
    if !(0.0..1.0).contains(&p.state_spread) {
        return Err(Error::Config(format!("state_spread {} outside [0, 1)", p.state_spread)));
    }
    let (lo, hi) = p.outlier_range;
    if lo > hi {
        return Err(Error::Config(format!("empty outlier range {lo}..={hi}")));
    }
    let weights: Vec<f64> = match &p.county_weights {
        Some(w) => {
            if w.len() != p.counties_per_state {
                return Err(Error::Config(format!(
                    "{} county weights for {} counties",
                    w.len(),
                    p.counties_per_state
                )));
            }
            w.clone()
        }
        None => (0..p.counties_per_state).map(|c| 1.0 / (c + 1) as f64).collect(),
    };
    let counties = if weights.is_empty() {
        None
    } else {
        Some(WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("county weights: {e}")))?)
    };

    let root = SeededRng::new(p.seed);
    let mut regions = Vec::new();
    let mut groups = Vec::new();
    for s in 0..p.states {
        let mut rng = root.derive(s as u64);
        let state = format!("s{s:02}");
        let factor = if p.state_spread > 0.0 {
            rng.random_range(1.0 - p.state_spread..1.0 + p.state_spread)
        } else {
            1.0
        };
        let mut counts: Vec<u64> =
            p.base_counts.iter().map(|&c| (c as f64 * factor).round() as u64).collect();
        if counts[5] == 0 {
            return Err(Error::DegenerateRatio(format!("state {state} has no households of size 6")));
        }
        let ratio = p.tail_ratio.unwrap_or(counts[6] as f64 / counts[5] as f64);
        counts.extend(sample_tail(counts[6], ratio, &mut rng)?);

        let mut sizes: Vec<u64> = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            sizes.extend(std::iter::repeat_n(i as u64 + 1, c as usize));
        }
        for _ in 0..p.outliers_per_state {
            sizes.push(rng.random_range(lo..=hi));
        }

        let base = regions.len();
        match &counties {
            None => {
                regions.push((state.clone(), vec!["root".to_string(), state]));
                groups.extend(sizes.into_iter().map(|sz| (base, sz)));
            }
            Some(pick) => {
                for c in 0..p.counties_per_state {
                    let county = format!("{state}c{c:03}");
                    regions.push((county.clone(), vec!["root".to_string(), state.clone(), county]));
                }
                for sz in sizes {
                    groups.push((base + pick.sample(&mut rng), sz));
                }
            }
        }
    }
    Ok(SynthLayout { regions, groups })
}

/// Partially synthetic housing data: per-state household counts for sizes 1..7, a
/// binomial tail, uniform outliers and weighted county assignment.
pub fn gen_synthetic_housing(p: &SynthParams) -> Result<Dataset> {
    let layout = synth_layout(p)?;
    let hierarchy =
        layout.regions.into_iter().map(|(region_id, path)| RegionRow { region_id, path }).collect::<Vec<_>>();
    let mut groups = Vec::with_capacity(layout.groups.len());
    let mut entities = Vec::new();
    let mut next_entity = 0u64;
    for (g, &(r, size)) in layout.groups.iter().enumerate() {
        let group_id = format!("g{g}");
        for _ in 0..size {
            entities.push(EntityRow { entity_id: format!("e{next_entity}"), group_id: group_id.clone() });
            next_entity += 1;
        }
        groups.push(GroupRow { group_id, region_id: hierarchy[r].region_id.clone() });
    }
    Ok(Dataset { entities, groups, hierarchy })
}

/// Same data as [`gen_synthetic_housing`] without materialising entity rows.
pub fn synthetic_tree(p: &SynthParams) -> Result<HierarchyTree> {
    let layout = synth_layout(p)?;
    let mut sizes: Vec<Vec<u64>> = vec![Vec::new(); layout.regions.len()];
    for (r, s) in layout.groups {
        sizes[r].push(s);
    }
    HierarchyTree::from_leaves(
        layout.regions.into_iter().zip(sizes).map(|((_, path), s)| (path, CountHistogram::from_sizes(s))),
    )
}

/// Writes the dataset tables plus `stats.json` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    write_tables(ds, dir)?;
    let path = dir.join("stats.json");
    let mut f = File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &dataset_stats(ds))?;
    writeln!(f)?;
    Ok(path)
}

/// Group count per leaf path; used to compare county proportions.
pub fn groups_per_region(ds: &Dataset) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for g in &ds.groups {
        *out.entry(g.region_id.clone()).or_insert(0) += 1;
    }
    out
}
