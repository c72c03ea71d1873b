//! Detection and tracing scenarios as deterministic train/test partitions of a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::toy_world::shuffle;
use crate::video::{Label, ManifestEntry};

/// Share of each stratum assigned to training when train and test share a distribution.
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Targeted,
    DBlind,
    MBlind,
    Open,
    TraceDataAware,
    TraceDataAgnostic,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Targeted,
        Scenario::DBlind,
        Scenario::MBlind,
        Scenario::Open,
        Scenario::TraceDataAware,
        Scenario::TraceDataAgnostic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Targeted => "targeted",
            Scenario::DBlind => "d-blind",
            Scenario::MBlind => "m-blind",
            Scenario::Open => "open",
            Scenario::TraceDataAware => "trace-data-aware",
            Scenario::TraceDataAgnostic => "trace-data-agnostic",
        }
    }

    pub fn is_tracing(self) -> bool {
        matches!(self, Scenario::TraceDataAware | Scenario::TraceDataAgnostic)
    }

    fn uses_leave_out(self) -> bool {
        matches!(self, Scenario::MBlind | Scenario::Open)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub scenario: Scenario,
    pub seed: u64,
    pub train_families: Vec<u32>,
    pub test_families: Vec<u32>,
    pub train_generators: Vec<String>,
    pub test_generators: Vec<String>,
    pub leave_out: Vec<String>,
    /// Manifest paths.
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Chained fakes of the test families, scored per stage by tracing evaluation.
    pub chained_test: Vec<String>,
    /// SHA-256 over the scenario and the three path lists.
    pub fingerprint: String,
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::InfeasibleSplit(msg.into())
}

/// Sorted ids of the single-stage generators present in `manifest`.
pub fn base_generators(manifest: &[ManifestEntry]) -> Vec<String> {
    let set: BTreeSet<String> = manifest
        .iter()
        .filter(|e| e.label == Label::Fake && !e.is_chained())
        .filter_map(|e| e.generator.clone())
        .collect();
    set.into_iter().collect()
}

fn stages_within(e: &ManifestEntry, gens: &BTreeSet<&str>) -> bool {
    e.stages().iter().all(|s| gens.contains(s))
}

/// Shuffles each stratum with `rng` and sends the first `TRAIN_FRACTION` of it to training.
fn stratified<'a>(
    groups: BTreeMap<String, Vec<&'a ManifestEntry>>,
    rng: &mut ChaCha8Rng,
) -> (Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut members) in groups {
        shuffle(&mut members, rng);
        let k = (members.len() as f64 * TRAIN_FRACTION).round() as usize;
        let k = k.clamp(
            usize::from(members.len() > 1),
            members.len().saturating_sub(1).max(1),
        );
        train.extend_from_slice(&members[..k.min(members.len())]);
        test.extend_from_slice(&members[k.min(members.len())..]);
    }
    (train, test)
}

/// Strata keyed by family and generator (or `real`).
fn group(entries: Vec<&ManifestEntry>) -> BTreeMap<String, Vec<&ManifestEntry>> {
    let mut g: BTreeMap<String, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in entries {
        g.entry(format!(
            "{}/{}",
            e.family,
            e.generator.as_deref().unwrap_or("real")
        ))
        .or_default()
        .push(e);
    }
    g
}

/// Truncates the larger class so real and fake counts match exactly.
fn balance<'a>(entries: Vec<&'a ManifestEntry>, rng: &mut ChaCha8Rng) -> Vec<&'a ManifestEntry> {
    let (mut real, mut fake): (Vec<_>, Vec<_>) =
        entries.into_iter().partition(|e| e.label == Label::Real);
    shuffle(&mut real, rng);
    shuffle(&mut fake, rng);
    let n = real.len().min(fake.len());
    real.truncate(n);
    fake.truncate(n);
    real.extend(fake);
    real
}

fn paths(entries: &[&ManifestEntry]) -> Vec<String> {
    let mut p: Vec<String> = entries.iter().map(|e| e.path.clone()).collect();
    p.sort();
    p
}

fn fingerprint(
    scenario: Scenario,
    train: &[String],
    test: &[String],
    chained: &[String],
) -> String {
    let mut h = Sha256::new();
    h.update(scenario.name().as_bytes());
    for (tag, list) in [("train", train), ("test", test), ("chained", chained)] {
        h.update([0u8]);
        h.update(tag.as_bytes());
        for p in list {
            h.update([0u8]);
            h.update(p.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the split for `scenario`. Cross-family scenarios train on the lowest family id and
/// test on the next; m-blind and open hold out `leave_out` (the last generator id when empty).
pub fn make_splits(
    scenario: Scenario,
    manifest: &[ManifestEntry],
    leave_out: &[String],
    seed: u64,
) -> Result<SplitSpec> {
    for e in manifest {
        e.validate()?;
    }
    let families: Vec<u32> = manifest
        .iter()
        .map(|e| e.family)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gens = base_generators(manifest);
    if families.is_empty() || gens.is_empty() {
        return Err(infeasible(
            "manifest needs at least one family and one generator",
        ));
    }
    if let Some(bad) = leave_out.iter().find(|g| !gens.contains(g)) {
        return Err(infeasible(format!(
            "leave-out generator `{bad}` is not in the corpus"
        )));
    }
    if !leave_out.is_empty() && !scenario.uses_leave_out() {
        return Err(infeasible(format!(
            "scenario {scenario} takes no leave-out set"
        )));
    }
    let held: Vec<String> = if scenario.uses_leave_out() {
        let mut h: Vec<String> = if leave_out.is_empty() {
            vec![gens[gens.len() - 1].clone()]
        } else {
            leave_out.to_vec()
        };
        h.sort();
        h.dedup();
        if h.len() >= gens.len() {
            return Err(infeasible(
                "leave-out set must leave at least one training generator",
            ));
        }
        h
    } else {
        Vec::new()
    };
    let kept: Vec<String> = gens.iter().filter(|g| !held.contains(g)).cloned().collect();
    let cross_family = matches!(
        scenario,
        Scenario::DBlind | Scenario::Open | Scenario::TraceDataAgnostic
    );
    if cross_family && families.len() < 2 {
        return Err(infeasible(format!(
            "{scenario} needs two data families, found {}",
            families.len()
        )));
    }
    let (train_fam, test_fam) = (
        families[0],
        if cross_family {
            families[1]
        } else {
            families[0]
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_fam = |f: u32| manifest.iter().filter(move |e| e.family == f);
    let all_set: BTreeSet<&str> = gens.iter().map(String::as_str).collect();
    let kept_set: BTreeSet<&str> = kept.iter().map(String::as_str).collect();
    let held_set: BTreeSet<&str> = held.iter().map(String::as_str).collect();
    let fakes_of = |f: u32, set: &BTreeSet<&str>| -> Vec<&ManifestEntry> {
        in_fam(f)
            .filter(|e| e.label == Label::Fake && stages_within(e, set))
            .collect()
    };
    let reals_of =
        |f: u32| -> Vec<&ManifestEntry> { in_fam(f).filter(|e| e.label == Label::Real).collect() };

    let (train, test, chained, train_families, test_families, train_gens, test_gens) =
        match scenario {
            Scenario::Targeted => {
                let mut pool = reals_of(train_fam);
                pool.extend(fakes_of(train_fam, &all_set));
                let (tr, te) = stratified(group(pool), &mut rng);
                (
                    balance(tr, &mut rng),
                    te,
                    vec![],
                    vec![train_fam],
                    vec![train_fam],
                    gens.clone(),
                    gens.clone(),
                )
            }
            Scenario::DBlind => {
                let mut tr = reals_of(train_fam);
                tr.extend(fakes_of(train_fam, &all_set));
                let mut te = reals_of(test_fam);
                te.extend(fakes_of(test_fam, &all_set));
                (
                    balance(tr, &mut rng),
                    te,
                    vec![],
                    vec![train_fam],
                    vec![test_fam],
                    gens.clone(),
                    gens.clone(),
                )
            }
            Scenario::MBlind => {
                let (real_tr, real_te) = stratified(group(reals_of(train_fam)), &mut rng);
                let mut tr = real_tr;
                tr.extend(fakes_of(train_fam, &kept_set));
                let mut te = real_te;
                te.extend(fakes_of(train_fam, &held_set));
                (
                    balance(tr, &mut rng),
                    te,
                    vec![],
                    vec![train_fam],
                    vec![train_fam],
                    kept.clone(),
                    held.clone(),
                )
            }
            Scenario::Open => {
                let mut tr = reals_of(train_fam);
                tr.extend(fakes_of(train_fam, &kept_set));
                let mut te = reals_of(test_fam);
                te.extend(fakes_of(test_fam, &held_set));
                (
                    balance(tr, &mut rng),
                    te,
                    vec![],
                    vec![train_fam],
                    vec![test_fam],
                    kept.clone(),
                    held.clone(),
                )
            }
            Scenario::TraceDataAware => {
                let pool: Vec<&ManifestEntry> = manifest
                    .iter()
                    .filter(|e| e.label == Label::Fake && !e.is_chained())
                    .collect();
                let (tr, te) = stratified(group(pool), &mut rng);
                let ch: Vec<&ManifestEntry> = manifest.iter().filter(|e| e.is_chained()).collect();
                (
                    tr,
                    te,
                    ch,
                    families.clone(),
                    families.clone(),
                    gens.clone(),
                    gens.clone(),
                )
            }
            Scenario::TraceDataAgnostic => {
                let base = |f: u32| -> Vec<&ManifestEntry> {
                    in_fam(f)
                        .filter(|e| e.label == Label::Fake && !e.is_chained())
                        .collect()
                };
                let ch: Vec<&ManifestEntry> = in_fam(test_fam).filter(|e| e.is_chained()).collect();
                (
                    base(train_fam),
                    base(test_fam),
                    ch,
                    vec![train_fam],
                    vec![test_fam],
                    gens.clone(),
                    gens.clone(),
                )
            }
        };

    if train.is_empty() {
        return Err(infeasible(format!(
            "{scenario} split has an empty training side"
        )));
    }
    if test.is_empty() {
        return Err(infeasible(format!(
            "{scenario} split has an empty test side"
        )));
    }
    let (train, test, chained_test) = (paths(&train), paths(&test), paths(&chained));
    let fp = fingerprint(scenario, &train, &test, &chained_test);
    let split = SplitSpec {
        scenario,
        seed,
        train_families,
        test_families,
        train_generators: train_gens,
        test_generators: test_gens,
        leave_out: held,
        train,
        test,
        chained_test,
        fingerprint: fp,
    };
    split.check(manifest)?;
    Ok(split)
}

impl SplitSpec {
    /// Verifies the scenario invariants against `manifest`, naming the first violated one.
    pub fn check(&self, manifest: &[ManifestEntry]) -> Result<()> {
        let by_path: BTreeMap<&str, &ManifestEntry> =
            manifest.iter().map(|e| (e.path.as_str(), e)).collect();
        let lookup = |paths: &[String]| -> Result<Vec<&ManifestEntry>> {
            paths
                .iter()
                .map(|p| {
                    by_path
                        .get(p.as_str())
                        .copied()
                        .ok_or_else(|| infeasible(format!("`{p}` is not in the manifest")))
                })
                .collect()
        };
        let (train, test) = (lookup(&self.train)?, lookup(&self.test)?);
        let train_set: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        if self.test.iter().any(|p| train_set.contains(p.as_str())) {
            return Err(infeasible("train and test sides share samples"));
        }
        let fams = |es: &[&ManifestEntry]| es.iter().map(|e| e.family).collect::<BTreeSet<_>>();
        let gens = |es: &[&ManifestEntry]| {
            es.iter()
                .filter(|e| e.label == Label::Fake)
                .flat_map(|e| e.stages())
                .map(str::to_string)
                .collect::<BTreeSet<_>>()
        };
        let (ftr, fte, gtr, gte) = (fams(&train), fams(&test), gens(&train), gens(&test));
        let declared = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
        let (dtr, dte) = (
            declared(&self.train_generators),
            declared(&self.test_generators),
        );
        if !gtr.is_subset(&dtr) || !gte.is_subset(&dte) {
            return Err(infeasible(format!(
                "{}: samples use undeclared generators",
                self.scenario
            )));
        }
        if !self.scenario.is_tracing() {
            let reals = train.iter().filter(|e| e.label == Label::Real).count();
            if reals * 2 != train.len() {
                return Err(infeasible(format!(
                    "class balance: {reals} real vs {} fake training samples",
                    train.len() - reals
                )));
            }
        } else if train
            .iter()
            .chain(&test)
            .any(|e| e.label != Label::Fake || e.is_chained())
        {
            return Err(infeasible(
                "tracing sides must hold single-stage fakes only",
            ));
        }
        match self.scenario {
            Scenario::Targeted | Scenario::TraceDataAware => {
                if ftr != fte {
                    return Err(infeasible(format!(
                        "{}: train and test families differ",
                        self.scenario
                    )));
                }
            }
            Scenario::DBlind | Scenario::TraceDataAgnostic => {
                if !ftr.is_disjoint(&fte) {
                    return Err(infeasible(format!(
                        "{}: train family equals test family",
                        self.scenario
                    )));
                }
                if dtr != dte {
                    return Err(infeasible(format!(
                        "{}: train and test generators differ",
                        self.scenario
                    )));
                }
            }
            Scenario::MBlind => {
                if ftr != fte {
                    return Err(infeasible("m-blind: train and test families differ"));
                }
                if !dtr.is_disjoint(&dte) {
                    return Err(infeasible(
                        "m-blind: test generators overlap training generators",
                    ));
                }
            }
            Scenario::Open => {
                if !ftr.is_disjoint(&fte) {
                    return Err(infeasible("open: train family equals test family"));
                }
                if !dtr.is_disjoint(&dte) {
                    return Err(infeasible(
                        "open: test generators overlap training generators",
                    ));
                }
            }
        }
        let expected = fingerprint(self.scenario, &self.train, &self.test, &self.chained_test);
        if expected != self.fingerprint {
            return Err(infeasible("split fingerprint does not match its contents"));
        }
        Ok(())
    }
}
