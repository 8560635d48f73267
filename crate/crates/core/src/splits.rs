//! Corpus partitioning with exact speaker/document disjointness against the
//! training split and approximate preservation of size targets and gender mix.
//!
//! Documents sharing a speaker form connected components. A component may
//! only feed a speaker-disjoint split as a whole; documents outside such
//! components go to the training split or to document-disjoint splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{Gender, UtteranceManifestRow};

pub const DEFAULT_RESTARTS: usize = 64;
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub target_fraction: f64,
    #[serde(default)]
    pub require_speaker_disjoint_from_train: bool,
    #[serde(default)]
    pub require_document_disjoint_from_train: bool,
}

impl SplitSpec {
    pub fn new(name: &str, target_fraction: f64, speaker: bool, document: bool) -> Self {
        Self {
            name: name.to_string(),
            target_fraction,
            require_speaker_disjoint_from_train: speaker,
            require_document_disjoint_from_train: document,
        }
    }

    fn is_train(&self) -> bool {
        !self.require_speaker_disjoint_from_train && !self.require_document_disjoint_from_train
    }
}

/// train 0.7, dev-asr 0.1 (speakers), dev-mt 0.1 (documents), test 0.1 (both).
pub fn default_specs() -> Vec<SplitSpec> {
    vec![
        SplitSpec::new("train", 0.7, false, false),
        SplitSpec::new("dev-asr", 0.1, true, false),
        SplitSpec::new("dev-mt", 0.1, false, true),
        SplitSpec::new("test", 0.1, true, true),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub restarts: usize,
    /// Weight of the gender-distribution term in the objective.
    pub alpha: f64,
    /// A speaker-disjoint split is infeasible when no component fits within
    /// this multiple of its target hours.
    pub max_component_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            alpha: DEFAULT_ALPHA,
            max_component_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub hours: f64,
    pub target_hours: f64,
    pub n_docs: usize,
    pub n_speakers: usize,
    /// Share of male and female hours (unknown gender excluded).
    pub male_share: f64,
    pub female_share: f64,
    pub gender_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub split: String,
    /// `"speaker"` or `"document"`.
    pub kind: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub splits: Vec<SplitStats>,
    pub constraints: Vec<ConstraintCheck>,
    /// `sum |hours - target| / total hours`.
    pub size_deviation: f64,
    /// Sum of per-split gender L1 deviations.
    pub gender_deviation: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, String>,
    pub report: SplitReport,
}

/// Per-document aggregates.
#[derive(Debug, Clone)]
struct Doc {
    id: String,
    hours: f64,
    male: f64,
    female: f64,
    speakers: BTreeSet<String>,
}

fn collect_docs(manifest: &[UtteranceManifestRow]) -> Vec<Doc> {
    let mut docs: BTreeMap<&str, Doc> = BTreeMap::new();
    for r in manifest {
        let d = docs.entry(&r.doc_id).or_insert_with(|| Doc {
            id: r.doc_id.clone(),
            hours: 0.0,
            male: 0.0,
            female: 0.0,
            speakers: BTreeSet::new(),
        });
        let h = r.duration_s / 3600.0;
        d.hours += h;
        match r.gender {
            Gender::M => d.male += h,
            Gender::F => d.female += h,
            Gender::U => {}
        }
        d.speakers.insert(r.speaker_id.clone());
    }
    docs.into_values().collect()
}

/// Connected components of the doc-speaker graph, as sorted doc indices.
fn components(docs: &[Doc]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..docs.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        for s in &d.speakers {
            match owner.get(s.as_str()) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => {
                    owner.insert(s, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..docs.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

struct Problem<'a> {
    docs: &'a [Doc],
    comps: Vec<Vec<usize>>,
    specs: &'a [SplitSpec],
    train: usize,
    speaker_splits: Vec<usize>,
    doc_splits: Vec<usize>,
    total: f64,
    global_male: f64,
    alpha: f64,
}

#[derive(Clone)]
struct State {
    /// Split of each document.
    doc_split: Vec<usize>,
    hours: Vec<f64>,
    male: Vec<f64>,
    female: Vec<f64>,
}

impl Problem<'_> {
    fn target(&self, s: usize) -> f64 {
        self.specs[s].target_fraction * self.total
    }

    fn split_objective(&self, st: &State, s: usize) -> f64 {
        let size = (st.hours[s] - self.target(s)).abs() / self.total;
        let known = st.male[s] + st.female[s];
        let gender = if known > 0.0 {
            2.0 * (st.male[s] / known - self.global_male).abs()
        } else {
            0.0
        };
        size + self.alpha * gender
    }

    fn objective(&self, st: &State) -> f64 {
        (0..self.specs.len()).map(|s| self.split_objective(st, s)).sum()
    }

    fn move_doc(&self, st: &mut State, d: usize, to: usize) {
        let from = st.doc_split[d];
        let doc = &self.docs[d];
        st.hours[from] -= doc.hours;
        st.male[from] -= doc.male;
        st.female[from] -= doc.female;
        st.hours[to] += doc.hours;
        st.male[to] += doc.male;
        st.female[to] += doc.female;
        st.doc_split[d] = to;
    }

    fn is_speaker_split(&self, s: usize) -> bool {
        self.specs[s].require_speaker_disjoint_from_train
    }

    /// Component placement: the speaker-disjoint split holding it, if any.
    fn comp_split(&self, st: &State, c: usize) -> Option<usize> {
        let s = st.doc_split[self.comps[c][0]];
        self.is_speaker_split(s).then_some(s)
    }

    fn move_comp(&self, st: &mut State, c: usize, to: usize) {
        for &d in &self.comps[c] {
            self.move_doc(st, d, to);
        }
    }

    fn initial(&self, rng: &mut ChaCha8Rng) -> State {
        let n_splits = self.specs.len();
        let mut st = State {
            doc_split: vec![self.train; self.docs.len()],
            hours: vec![0.0; n_splits],
            male: vec![0.0; n_splits],
            female: vec![0.0; n_splits],
        };
        for d in self.docs {
            st.hours[self.train] += d.hours;
            st.male[self.train] += d.male;
            st.female[self.train] += d.female;
        }
        let mut order: Vec<usize> = (0..self.comps.len()).collect();
        order.shuffle(rng);
        for c in order {
            let h: f64 = self.comps[c].iter().map(|&d| self.docs[d].hours).sum();
            let best = self
                .speaker_splits
                .iter()
                .copied()
                .filter(|&s| st.hours[s] + h <= self.target(s) * 1.05)
                .max_by(|&a, &b| {
                    (self.target(a) - st.hours[a])
                        .partial_cmp(&(self.target(b) - st.hours[b]))
                        .unwrap()
                        .then(b.cmp(&a))
                });
            if let Some(s) = best {
                self.move_comp(&mut st, c, s);
            }
        }
        let mut pool: Vec<usize> = (0..self.docs.len()).filter(|&d| st.doc_split[d] == self.train).collect();
        pool.shuffle(rng);
        for d in pool {
            let h = self.docs[d].hours;
            let best = self
                .doc_splits
                .iter()
                .copied()
                .filter(|&s| st.hours[s] + h <= self.target(s) * 1.05)
                .max_by(|&a, &b| {
                    (self.target(a) - st.hours[a])
                        .partial_cmp(&(self.target(b) - st.hours[b]))
                        .unwrap()
                        .then(b.cmp(&a))
                });
            if let Some(s) = best {
                self.move_doc(&mut st, d, s);
            }
        }
        st
    }

    /// First-improvement hill climbing over component moves and swaps and
    /// document moves and swaps; every move keeps the hard constraints.
    fn improve(&self, st: &mut State) {
        let eps = 1e-12;
        for _ in 0..500 {
            let mut improved = false;
            let mut cur = self.objective(st);

            // Component to another speaker-disjoint split or back to train.
            for c in 0..self.comps.len() {
                let from = self.comp_split(st, c);
                let mut targets: Vec<Option<usize>> = self.speaker_splits.iter().map(|&s| Some(s)).collect();
                targets.push(None);
                for to in targets {
                    if to == from {
                        continue;
                    }
                    let saved: Vec<usize> = self.comps[c].iter().map(|&d| st.doc_split[d]).collect();
                    self.move_comp(st, c, to.unwrap_or(self.train));
                    let obj = self.objective(st);
                    if obj < cur - eps {
                        cur = obj;
                        improved = true;
                        break;
                    }
                    for (&d, &s) in self.comps[c].iter().zip(&saved) {
                        self.move_doc(st, d, s);
                    }
                }
            }

            // Swap two components placed differently.
            for a in 0..self.comps.len() {
                for b in a + 1..self.comps.len() {
                    let (pa, pb) = (self.comp_split(st, a), self.comp_split(st, b));
                    if pa == pb {
                        continue;
                    }
                    let saved_a: Vec<usize> = self.comps[a].iter().map(|&d| st.doc_split[d]).collect();
                    let saved_b: Vec<usize> = self.comps[b].iter().map(|&d| st.doc_split[d]).collect();
                    self.move_comp(st, a, pb.unwrap_or(self.train));
                    self.move_comp(st, b, pa.unwrap_or(self.train));
                    let obj = self.objective(st);
                    if obj < cur - eps {
                        cur = obj;
                        improved = true;
                        continue;
                    }
                    for (&d, &s) in self.comps[a].iter().zip(&saved_a) {
                        self.move_doc(st, d, s);
                    }
                    for (&d, &s) in self.comps[b].iter().zip(&saved_b) {
                        self.move_doc(st, d, s);
                    }
                }
            }

            // Documents outside speaker-disjoint splits: move or swap among
            // train and the document-disjoint splits.
            let mut open: Vec<usize> = vec![self.train];
            open.extend(&self.doc_splits);
            let free: Vec<usize> = (0..self.docs.len())
                .filter(|&d| !self.is_speaker_split(st.doc_split[d]))
                .collect();
            for &d in &free {
                let from = st.doc_split[d];
                for &to in &open {
                    if to == from {
                        continue;
                    }
                    self.move_doc(st, d, to);
                    let obj = self.objective(st);
                    if obj < cur - eps {
                        cur = obj;
                        improved = true;
                        break;
                    }
                    self.move_doc(st, d, from);
                }
            }
            for (i, &a) in free.iter().enumerate() {
                for &b in &free[i + 1..] {
                    let (sa, sb) = (st.doc_split[a], st.doc_split[b]);
                    if sa == sb {
                        continue;
                    }
                    self.move_doc(st, a, sb);
                    self.move_doc(st, b, sa);
                    let obj = self.objective(st);
                    if obj < cur - eps {
                        cur = obj;
                        improved = true;
                        continue;
                    }
                    self.move_doc(st, a, sa);
                    self.move_doc(st, b, sb);
                }
            }
            if !improved {
                return;
            }
        }
    }
}

fn validate_specs(specs: &[SplitSpec]) -> Result<usize> {
    if specs.is_empty() {
        return Err(Error::Config("no split specs".into()));
    }
    let sum: f64 = specs.iter().map(|s| s.target_fraction).sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
    }
    if specs.iter().any(|s| !(0.0..=1.0).contains(&s.target_fraction)) {
        return Err(Error::Config("split fraction outside [0, 1]".into()));
    }
    let names: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    if names.len() != specs.len() {
        return Err(Error::Config("duplicate split name".into()));
    }
    let trains: Vec<usize> = (0..specs.len()).filter(|&i| specs[i].is_train()).collect();
    match trains.as_slice() {
        [t] => Ok(*t),
        _ => Err(Error::Config(
            "exactly one split must have no disjointness requirement (the training split)".into(),
        )),
    }
}

/// Partitions documents into the given splits; deterministic in `seed`.
pub fn make_splits(
    manifest: &[UtteranceManifestRow],
    specs: &[SplitSpec],
    seed: u64,
    cfg: &SplitConfig,
) -> Result<SplitAssignment> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("manifest has no rows"));
    }
    let train = validate_specs(specs)?;
    let docs = collect_docs(manifest);
    let comps = components(&docs);
    let total: f64 = docs.iter().map(|d| d.hours).sum();
    if total <= 0.0 {
        return Err(Error::EmptyInput("manifest has no duration"));
    }
    let (gm, gf): (f64, f64) = docs.iter().fold((0.0, 0.0), |(m, f), d| (m + d.male, f + d.female));
    let speaker_splits: Vec<usize> = (0..specs.len())
        .filter(|&s| specs[s].require_speaker_disjoint_from_train)
        .collect();
    let doc_splits: Vec<usize> = (0..specs.len())
        .filter(|&s| specs[s].require_document_disjoint_from_train && !specs[s].require_speaker_disjoint_from_train)
        .collect();

    let comp_hours: Vec<f64> = comps
        .iter()
        .map(|c| c.iter().map(|&d| docs[d].hours).sum())
        .collect();
    for &s in &speaker_splits {
        let target = specs[s].target_fraction * total;
        if target > 0.0 && !comp_hours.iter().any(|&h| h <= target * cfg.max_component_ratio) {
            let (big, h) = comp_hours
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, &h)| (i, h))
                .unwrap();
            let speakers: BTreeSet<&str> = comps[big]
                .iter()
                .flat_map(|&d| docs[d].speakers.iter().map(String::as_str))
                .collect();
            return Err(Error::Infeasible(format!(
                "split {:?} needs {:.3} h of speaker-disjoint data but the smallest speaker component \
                 (docs starting {:?}, speakers {:?}) has {:.3} h",
                specs[s].name,
                target,
                docs[comps[big][0]].id,
                speakers.iter().take(5).collect::<Vec<_>>(),
                h
            )));
        }
    }

    let problem = Problem {
        docs: &docs,
        comps,
        specs,
        train,
        speaker_splits,
        doc_splits,
        total,
        global_male: if gm + gf > 0.0 { gm / (gm + gf) } else { 0.5 },
        alpha: cfg.alpha,
    };
    let restarts = cfg.restarts.max(1);
    let results: Vec<(f64, State)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64));
            let mut st = problem.initial(&mut rng);
            problem.improve(&mut st);
            (problem.objective(&st), st)
        })
        .collect();
    let (_, best) = results
        .into_iter()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one restart");

    let assignment: BTreeMap<String, String> = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| (doc.id.clone(), specs[best.doc_split[d]].name.clone()))
        .collect();
    let report = evaluate_assignment(manifest, specs, &assignment, cfg.alpha)?;
    Ok(SplitAssignment { assignment, report })
}

/// Recomputes the report for an assignment from the manifest alone.
pub fn evaluate_assignment(
    manifest: &[UtteranceManifestRow],
    specs: &[SplitSpec],
    assignment: &BTreeMap<String, String>,
    alpha: f64,
) -> Result<SplitReport> {
    let train = validate_specs(specs)?;
    let idx: BTreeMap<&str, usize> = specs.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
    let n = specs.len();
    let mut hours = vec![0.0; n];
    let mut male = vec![0.0; n];
    let mut female = vec![0.0; n];
    let mut doc_sets: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    let mut spk_sets: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
    for r in manifest {
        let name = assignment
            .get(&r.doc_id)
            .ok_or_else(|| Error::Format(format!("document {:?} has no split", r.doc_id)))?;
        let s = *idx
            .get(name.as_str())
            .ok_or_else(|| Error::Format(format!("unknown split {name:?}")))?;
        let h = r.duration_s / 3600.0;
        hours[s] += h;
        match r.gender {
            Gender::M => male[s] += h,
            Gender::F => female[s] += h,
            Gender::U => {}
        }
        doc_sets[s].insert(&r.doc_id);
        spk_sets[s].insert(&r.speaker_id);
    }
    let total: f64 = hours.iter().sum();
    let (gm, gf): (f64, f64) = (male.iter().sum(), female.iter().sum());
    let global_male = if gm + gf > 0.0 { gm / (gm + gf) } else { 0.5 };

    let mut splits = Vec::with_capacity(n);
    let mut constraints = Vec::new();
    let (mut size_dev, mut gender_dev) = (0.0, 0.0);
    for (s, spec) in specs.iter().enumerate() {
        let known = male[s] + female[s];
        let (ms, fs) = if known > 0.0 {
            (male[s] / known, female[s] / known)
        } else {
            (0.0, 0.0)
        };
        let l1 = if known > 0.0 {
            (ms - global_male).abs() + (fs - (1.0 - global_male)).abs()
        } else {
            0.0
        };
        let target = spec.target_fraction * total;
        size_dev += (hours[s] - target).abs() / total;
        gender_dev += l1;
        splits.push(SplitStats {
            name: spec.name.clone(),
            hours: hours[s],
            target_hours: target,
            n_docs: doc_sets[s].len(),
            n_speakers: spk_sets[s].len(),
            male_share: ms,
            female_share: fs,
            gender_l1: l1,
        });
        if spec.require_speaker_disjoint_from_train {
            constraints.push(ConstraintCheck {
                split: spec.name.clone(),
                kind: "speaker".into(),
                holds: spk_sets[s].is_disjoint(&spk_sets[train]),
            });
        }
        if spec.require_document_disjoint_from_train {
            constraints.push(ConstraintCheck {
                split: spec.name.clone(),
                kind: "document".into(),
                holds: doc_sets[s].is_disjoint(&doc_sets[train]),
            });
        }
    }
    Ok(SplitReport {
        splits,
        constraints,
        size_deviation: size_dev,
        gender_deviation: gender_dev,
        objective: size_dev + alpha * gender_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(doc: &str, spk: &str, g: Gender, dur: f64) -> UtteranceManifestRow {
        UtteranceManifestRow {
            utt_id: format!("{doc}-{spk}"),
            doc_id: doc.into(),
            speaker_id: spk.into(),
            gender: g,
            duration_s: dur,
            start_s: 0.0,
            end_s: dur,
            text_src: String::new(),
            text_tgt: String::new(),
            quality: None,
            provenance: None,
        }
    }

    #[test]
    fn four_independent_docs() {
        let m = vec![
            row("d1", "s1", Gender::M, 3600.0),
            row("d2", "s2", Gender::F, 1800.0),
            row("d3", "s3", Gender::M, 900.0),
            row("d4", "s4", Gender::F, 900.0),
        ];
        let specs = vec![
            SplitSpec::new("train", 0.5, false, false),
            SplitSpec::new("dev", 0.25, true, false),
            SplitSpec::new("test", 0.25, true, true),
        ];
        let a = make_splits(&m, &specs, 1, &SplitConfig::default()).unwrap();
        assert_eq!(a.assignment.len(), 4);
        assert!(a.report.constraints.iter().all(|c| c.holds));
        assert_eq!(a, make_splits(&m, &specs, 1, &SplitConfig::default()).unwrap());
    }

    #[test]
    fn single_speaker_everywhere_is_infeasible() {
        let m: Vec<_> = (0..6).map(|i| row(&format!("d{i}"), "same", Gender::M, 600.0)).collect();
        let err = make_splits(&m, &default_specs(), 0, &SplitConfig::default()).unwrap_err();
        match err {
            Error::Infeasible(msg) => assert!(msg.contains("same")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let m = vec![row("d", "s", Gender::M, 10.0)];
        let specs = vec![SplitSpec::new("train", 0.5, false, false)];
        assert!(matches!(make_splits(&m, &specs, 0, &SplitConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn components_follow_shared_speakers() {
        let docs = collect_docs(&[
            row("a", "x", Gender::M, 1.0),
            row("b", "y", Gender::M, 1.0),
            row("c", "x", Gender::M, 1.0),
            row("c", "z", Gender::F, 1.0),
            row("d", "w", Gender::F, 1.0),
        ]);
        assert_eq!(components(&docs), vec![vec![0, 2], vec![1], vec![3]]);
    }
}
