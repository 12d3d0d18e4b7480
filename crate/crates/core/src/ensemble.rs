//! Finite supports: seeded ensembles of specimens prepared in one state.
//!
//! Each [`Specimen`] carries two records: the outcomes of measurements it
//! actually underwent, and the objective values it is deemed to possess.
//! Objective values are produced by correlation-extension passes:
//!
//! * [`Support::apply_strict_extension`] only extends a correlation to
//!   specimens on which one of the two observables was actually measured,
//!   and refuses an inference when the specimen carries a measurement of
//!   something co-sited with, and incompatible with, the inferred observable
//!   (the locality guard).
//! * [`Support::apply_wide_extension`] extends a correlation to every
//!   specimen, sampling the common value from the Born marginal where no
//!   measurement anchors it.
//!
//! All randomness is drawn from a counter-based stream keyed by
//! `(seed, specimen id, observable labels)`, so results do not depend on
//! iteration order or on how work is split across threads.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{CMatrix, CVector, LinalgError};
use crate::quantum::{
    born_probability, CorrelationRule, Direction, Observable, Outcome, QuantumError, StateVector,
};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("a support needs at least one specimen")]
    EmptySupport,
    #[error("unknown specimen id {0}")]
    UnknownSpecimen(usize),
    #[error("observables '{0}' and '{1}' do not commute and cannot be measured together")]
    NonCommutingRequest(String, String),
    #[error("specimen {specimen} already carries a measurement of '{recorded}', which does not commute with '{requested}'")]
    ExclusionViolation {
        specimen: usize,
        recorded: String,
        requested: String,
    },
    #[error("label '{0}' is already registered for a different operator")]
    LabelClash(String),
    #[error("label '{0}' is not known to this support")]
    LabelAbsent(String),
    #[error("rule {rule} was certified in state '{rule_state}', support holds '{support_state}'")]
    RuleStateMismatch {
        rule: String,
        rule_state: String,
        support_state: String,
    },
    #[error("specimen {specimen}: '{label}' would be assigned {new} but already holds {existing}")]
    ConflictingValue {
        specimen: usize,
        label: String,
        existing: Outcome,
        new: Outcome,
    },
    #[error("specimen {0}: recorded outcomes have zero joint probability")]
    InconsistentRecords(usize),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("outcome {outcome} is not in the spectrum of '{label}'")]
    BadOutcome { label: String, outcome: Outcome },
    #[error("dump failed: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

/// Uniform draw in `[0, 1)` from the stream keyed by `(seed, specimen, key)`.
pub fn keyed_uniform(seed: u64, specimen: usize, key: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(specimen as u64);
    rng.random::<f64>()
}

/// An objective value together with the label of the observable whose
/// record licensed it (`via` equals the value's own label for measured
/// values, and [`BORN_SAMPLED`] for values drawn by the wide extension).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: Outcome,
    pub via: String,
}

pub const BORN_SAMPLED: &str = "born";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specimen {
    pub id: usize,
    pub measured: BTreeMap<String, Outcome>,
    pub objective: BTreeMap<String, ObjectiveValue>,
}

impl Specimen {
    fn new(id: usize) -> Self {
        Specimen {
            id,
            measured: BTreeMap::new(),
            objective: BTreeMap::new(),
        }
    }

    /// Measured value if any, otherwise the objective one.
    pub fn value_of(&self, label: &str) -> Option<Outcome> {
        self.measured
            .get(label)
            .copied()
            .or_else(|| self.objective.get(label).map(|o| o.value))
    }

    fn assign(&mut self, label: &str, value: Outcome, via: &str) -> Result<bool> {
        if let Some(&m) = self.measured.get(label) {
            if m != value {
                return Err(EnsembleError::ConflictingValue {
                    specimen: self.id,
                    label: label.to_string(),
                    existing: m,
                    new: value,
                });
            }
        }
        match self.objective.get(label) {
            Some(existing) if existing.value != value => Err(EnsembleError::ConflictingValue {
                specimen: self.id,
                label: label.to_string(),
                existing: existing.value,
                new: value,
            }),
            Some(_) => Ok(false),
            None => {
                self.objective.insert(
                    label.to_string(),
                    ObjectiveValue {
                        value,
                        via: via.to_string(),
                    },
                );
                Ok(true)
            }
        }
    }

    /// A measured value is also an objective value.
    fn objectify_measured(&mut self, label: &str) -> Result<()> {
        if let Some(&m) = self.measured.get(label) {
            self.assign(label, m, label)?;
        }
        Ok(())
    }
}

/// An inference the locality guard refused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Refusal {
    pub specimen: usize,
    /// The unmeasured observable whose value would have been inferred.
    pub target: String,
    /// The co-sited, incompatible observable actually measured on the specimen.
    pub blocker: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExtensionOutcome {
    /// Objective values newly assigned by inference or sampling. Measured
    /// values copied into the objective record are not counted.
    pub assigned: usize,
    pub refusals: Vec<Refusal>,
}

/// A finite support of the state `state`.
#[derive(Clone, Debug)]
pub struct Support {
    state: StateVector,
    specimens: Vec<Specimen>,
    seed: u64,
    tol: f64,
    registry: BTreeMap<String, Observable>,
}

/// Creates `n` unmeasured specimens; ids are `0..n`.
pub fn create_support(psi: StateVector, n: usize, seed: u64) -> Result<Support> {
    Support::new(psi, n, seed, crate::linalg::DEFAULT_TOL)
}

impl Support {
    pub fn new(state: StateVector, n: usize, seed: u64, tol: f64) -> Result<Self> {
        if n == 0 {
            return Err(EnsembleError::EmptySupport);
        }
        Ok(Support {
            state,
            specimens: (0..n).map(Specimen::new).collect(),
            seed,
            tol,
            registry: BTreeMap::new(),
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.specimens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specimens.is_empty()
    }

    pub fn specimens(&self) -> &[Specimen] {
        &self.specimens
    }

    pub fn specimen(&self, id: usize) -> Result<&Specimen> {
        self.specimens
            .get(id)
            .ok_or(EnsembleError::UnknownSpecimen(id))
    }

    pub fn all_ids(&self) -> BTreeSet<usize> {
        (0..self.len()).collect()
    }

    pub fn observable(&self, label: &str) -> Option<&Observable> {
        self.registry.get(label)
    }

    /// Makes `obs` known under its label. Re-registering the same operator is a no-op.
    pub fn register(&mut self, obs: &Observable) -> Result<()> {
        match self.registry.get(obs.label()) {
            Some(existing) => {
                if existing.op().distance(obs.op())? > self.tol || existing.site() != obs.site() {
                    return Err(EnsembleError::LabelClash(obs.label().to_string()));
                }
                Ok(())
            }
            None => {
                self.registry.insert(obs.label().to_string(), obs.clone());
                Ok(())
            }
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(EnsembleError::UnknownSpecimen(id)),
            None => Ok(()),
        }
    }

    fn check_exclusion(&self, ids: &[usize], observables: &[&Observable]) -> Result<()> {
        // recorded label -> requested label it clashes with
        let mut clash: BTreeMap<&str, Option<&str>> = BTreeMap::new();
        for id in ids {
            for label in self.specimens[*id].measured.keys() {
                let verdict = match clash.get(label.as_str()) {
                    Some(v) => *v,
                    None => {
                        let recorded = &self.registry[label];
                        let mut found = None;
                        for obs in observables {
                            if !recorded.commutes_with(obs, self.tol)? {
                                found = Some(obs.label());
                                break;
                            }
                        }
                        clash.insert(label.as_str(), found);
                        found
                    }
                };
                if let Some(requested) = verdict {
                    return Err(EnsembleError::ExclusionViolation {
                        specimen: *id,
                        recorded: label.clone(),
                        requested: requested.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Jointly measures a commuting set of observables on the given
    /// specimens, sampling from the Born distribution conditioned on each
    /// specimen's earlier records. Returns the outcomes in request order.
    pub fn measure(
        &mut self,
        ids: &[usize],
        observables: &[&Observable],
    ) -> Result<Vec<(usize, Vec<Outcome>)>> {
        for (i, a) in observables.iter().enumerate() {
            for b in &observables[i + 1..] {
                if !a.commutes_with(b, self.tol)? {
                    return Err(EnsembleError::NonCommutingRequest(
                        a.label().into(),
                        b.label().into(),
                    ));
                }
            }
        }
        self.check_ids(ids)?;
        for obs in observables {
            self.register(obs)?;
        }
        self.check_exclusion(ids, observables)?;

        let mut key = String::from("measure");
        for obs in observables {
            key.push(':');
            key.push_str(obs.label());
        }
        let sampler = JointSampler::new(&self.state, &self.registry, observables)?;
        let mut selected = vec![false; self.len()];
        for &id in ids {
            selected[id] = true;
        }
        let seed = self.seed;

        let draw = |cache: &mut HashMap<Vec<(String, Outcome)>, Vec<f64>>,
                    spec: &mut Specimen|
         -> Result<(usize, Vec<Outcome>)> {
            let context: Vec<(String, Outcome)> =
                spec.measured.iter().map(|(k, v)| (k.clone(), *v)).collect();
            let cdf = match cache.get(&context) {
                Some(c) => c,
                None => {
                    let c = sampler
                        .cdf(&context)
                        .ok_or(EnsembleError::InconsistentRecords(spec.id))?;
                    cache.entry(context).or_insert(c)
                }
            };
            let u = keyed_uniform(seed, spec.id, &key);
            let idx = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            let outcomes = sampler.tuple(idx);
            for (obs, &o) in observables.iter().zip(&outcomes) {
                spec.measured.insert(obs.label().to_string(), o);
            }
            Ok((spec.id, outcomes))
        };

        #[cfg(feature = "parallel")]
        let results: Vec<(usize, Vec<Outcome>)> = {
            use rayon::prelude::*;
            self.specimens
                .par_iter_mut()
                .filter(|s| selected[s.id])
                .map_init(HashMap::new, |cache, spec| draw(cache, spec))
                .collect::<Result<Vec<_>>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<(usize, Vec<Outcome>)> = {
            let mut cache = HashMap::new();
            self.specimens
                .iter_mut()
                .filter(|s| selected[s.id])
                .map(|spec| draw(&mut cache, spec))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(results)
    }

    /// Records an outcome revealed by other means (for instance by the
    /// occurrence of a history) as an actual measurement. The exclusion rule
    /// applies as for [`Support::measure`].
    pub fn record_outcome(&mut self, id: usize, obs: &Observable, outcome: Outcome) -> Result<()> {
        if !obs.kind().contains(outcome) {
            return Err(EnsembleError::BadOutcome {
                label: obs.label().into(),
                outcome,
            });
        }
        self.check_ids(&[id])?;
        self.register(obs)?;
        self.check_exclusion(&[id], &[obs])?;
        let spec = &mut self.specimens[id];
        if let Some(&m) = spec.measured.get(obs.label()) {
            if m != outcome {
                return Err(EnsembleError::ConflictingValue {
                    specimen: id,
                    label: obs.label().into(),
                    existing: m,
                    new: outcome,
                });
            }
        }
        spec.measured.insert(obs.label().into(), outcome);
        Ok(())
    }

    /// Measures each policy group on its allotted block of specimen ids.
    pub fn measure_policy<'a>(
        &mut self,
        policy: &MeasurementPolicy,
        resolve: impl Fn(&str) -> Option<&'a Observable>,
    ) -> Result<()> {
        for (group, range) in policy.allocate(self.len()) {
            if range.is_empty() {
                continue;
            }
            let observables = policy.groups[group]
                .0
                .iter()
                .map(|l| resolve(l).ok_or_else(|| EnsembleError::LabelAbsent(l.clone())))
                .collect::<Result<Vec<_>>>()?;
            let ids: Vec<usize> = range.collect();
            self.measure(&ids, &observables)?;
        }
        Ok(())
    }

    fn check_rule(&mut self, rule: &CorrelationRule) -> Result<()> {
        if !rule.state().same_as(&self.state, self.tol) {
            return Err(EnsembleError::RuleStateMismatch {
                rule: rule.describe(),
                rule_state: rule.state().label().into(),
                support_state: self.state.label().into(),
            });
        }
        self.register(rule.a())?;
        self.register(rule.b())?;
        Ok(())
    }

    /// Measured observable on `spec` that is co-sited with and incompatible with `target`.
    fn locality_blocker(&self, spec: &Specimen, target: &Observable) -> Result<Option<String>> {
        for label in spec.measured.keys() {
            let recorded = &self.registry[label];
            if recorded.site() == target.site() && !recorded.commutes_with(target, self.tol)? {
                return Ok(Some(label.clone()));
            }
        }
        Ok(None)
    }

    /// Extends `rule` to the specimens on which `a` or `b` was actually measured.
    pub fn apply_strict_extension(&mut self, rule: &CorrelationRule) -> Result<ExtensionOutcome> {
        self.check_rule(rule)?;
        let (a, b) = (rule.a(), rule.b());
        let (la, lb) = (a.label().to_string(), b.label().to_string());
        let mut out = ExtensionOutcome::default();

        // (source label, source value, target observable) inferences per specimen
        for idx in 0..self.specimens.len() {
            let ma = self.specimens[idx].measured.get(&la).copied();
            let mb = self.specimens[idx].measured.get(&lb).copied();
            if ma.is_none() && mb.is_none() {
                continue;
            }
            let inference: Option<(&Observable, Outcome, &str)> = match (rule.direction(), ma, mb) {
                (_, Some(va), Some(vb)) => {
                    let consistent = match rule.direction() {
                        Direction::Iff => rule.partner_value(va) == vb,
                        Direction::Implies => {
                            va != a.kind().positive() || rule.partner_value(va) == vb
                        }
                    };
                    if !consistent {
                        return Err(EnsembleError::ConflictingValue {
                            specimen: idx,
                            label: lb.clone(),
                            existing: vb,
                            new: rule.partner_value(va),
                        });
                    }
                    None
                }
                (Direction::Iff, Some(va), None) => Some((b, rule.partner_value(va), la.as_str())),
                (Direction::Iff, None, Some(vb)) => Some((a, rule.partner_value(vb), lb.as_str())),
                (Direction::Implies, Some(va), None) if va == a.kind().positive() => {
                    Some((b, rule.partner_value(va), la.as_str()))
                }
                (Direction::Implies, None, Some(vb))
                    if rule.partner_value(vb) == a.kind().negative() =>
                {
                    Some((a, a.kind().negative(), lb.as_str()))
                }
                _ => None,
            };
            let spec = &mut self.specimens[idx];
            spec.objectify_measured(&la)?;
            spec.objectify_measured(&lb)?;
            if let Some((target, value, via)) = inference {
                if let Some(blocker) = self.locality_blocker(&self.specimens[idx], target)? {
                    out.refusals.push(Refusal {
                        specimen: idx,
                        target: target.label().into(),
                        blocker,
                    });
                    continue;
                }
                if self.specimens[idx].assign(target.label(), value, via)? {
                    out.assigned += 1;
                }
            }
        }
        Ok(out)
    }

    /// Extends `rule` to every specimen of the support.
    pub fn apply_wide_extension(&mut self, rule: &CorrelationRule) -> Result<ExtensionOutcome> {
        self.check_rule(rule)?;
        let (a, b) = (rule.a().clone(), rule.b().clone());
        let (la, lb) = (a.label().to_string(), b.label().to_string());
        let p_a_positive = born_probability(&a, a.kind().positive(), &self.state)?;
        let sample_key = format!("wide:{la}");
        let mut out = ExtensionOutcome::default();

        for spec in &mut self.specimens {
            spec.objectify_measured(&la)?;
            spec.objectify_measured(&lb)?;
            let va = spec.value_of(&la);
            let vb = spec.value_of(&lb);
            match rule.direction() {
                Direction::Iff => match (va, vb) {
                    (Some(x), Some(y)) => {
                        if rule.partner_value(x) != y {
                            return Err(EnsembleError::ConflictingValue {
                                specimen: spec.id,
                                label: lb.clone(),
                                existing: y,
                                new: rule.partner_value(x),
                            });
                        }
                    }
                    (Some(x), None) => {
                        spec.assign(&lb, rule.partner_value(x), &la)?;
                        out.assigned += 1;
                    }
                    (None, Some(y)) => {
                        spec.assign(&la, rule.partner_value(y), &lb)?;
                        out.assigned += 1;
                    }
                    (None, None) => {
                        let u = keyed_uniform(self.seed, spec.id, &sample_key);
                        let x = if u < p_a_positive {
                            a.kind().positive()
                        } else {
                            a.kind().negative()
                        };
                        spec.assign(&la, x, BORN_SAMPLED)?;
                        spec.assign(&lb, rule.partner_value(x), &la)?;
                        out.assigned += 2;
                    }
                },
                Direction::Implies => {
                    if va == Some(a.kind().positive()) {
                        if spec.assign(&lb, rule.partner_value(a.kind().positive()), &la)? {
                            out.assigned += 1;
                        }
                    } else if let Some(y) = vb {
                        if rule.partner_value(y) == a.kind().negative()
                            && spec.assign(&la, a.kind().negative(), &lb)?
                        {
                            out.assigned += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Specimens holding objective values for both observables.
    pub fn simultaneous_reality_set(&self, o1: &str, o2: &str) -> BTreeSet<usize> {
        self.specimens
            .iter()
            .filter(|s| s.objective.contains_key(o1) && s.objective.contains_key(o2))
            .map(|s| s.id)
            .collect()
    }

    /// The measured set of `label`.
    pub fn measured_set(&self, label: &str) -> BTreeSet<usize> {
        self.specimens
            .iter()
            .filter(|s| s.measured.contains_key(label))
            .map(|s| s.id)
            .collect()
    }

    /// Specimens on which `label` was measured with outcome `outcome`.
    pub fn measured_with(&self, label: &str, outcome: Outcome) -> BTreeSet<usize> {
        self.specimens
            .iter()
            .filter(|s| s.measured.get(label) == Some(&outcome))
            .map(|s| s.id)
            .collect()
    }

    /// Specimens possessing an objective value of `label` (measured or inferred).
    pub fn objective_set(&self, label: &str) -> BTreeSet<usize> {
        self.specimens
            .iter()
            .filter(|s| s.objective.contains_key(label))
            .map(|s| s.id)
            .collect()
    }

    pub fn objective_with(&self, label: &str, value: Outcome) -> BTreeSet<usize> {
        self.specimens
            .iter()
            .filter(|s| s.objective.get(label).map(|o| o.value) == Some(value))
            .map(|s| s.id)
            .collect()
    }

    /// One JSON object per specimen, newline-delimited.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for spec in &self.specimens {
            serde_json::to_writer(&mut w, spec).map_err(|e| EnsembleError::Io(e.to_string()))?;
            w.write_all(b"\n")
                .map_err(|e| EnsembleError::Io(e.to_string()))?;
        }
        Ok(())
    }

    /// One CSV row per specimen with `m_<label>`, `o_<label>` and
    /// `via_<label>` columns for every registered label. Absent values are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let io = |e: csv::Error| EnsembleError::Io(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        let labels: Vec<&String> = self.registry.keys().collect();
        let mut header = vec!["id".to_string()];
        for l in &labels {
            header.push(format!("m_{l}"));
            header.push(format!("o_{l}"));
            header.push(format!("via_{l}"));
        }
        wr.write_record(&header).map_err(io)?;
        for spec in &self.specimens {
            let mut row = vec![spec.id.to_string()];
            for l in &labels {
                row.push(
                    spec.measured
                        .get(*l)
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                );
                match spec.objective.get(*l) {
                    Some(o) => {
                        row.push(o.value.to_string());
                        row.push(o.via.clone());
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            wr.write_record(&row).map_err(io)?;
        }
        wr.flush().map_err(|e| EnsembleError::Io(e.to_string()))?;
        Ok(())
    }
}

/// The sets entering the EPR intersection argument.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EprIntersection {
    /// `(𝐀 ∪ 𝐏) ∩ (𝐁 ∪ 𝐐)`
    pub x_cap_y: BTreeSet<usize>,
    pub a_cap_q: BTreeSet<usize>,
    pub p_cap_b: BTreeSet<usize>,
    /// Whether `x_cap_y == a_cap_q ∪ p_cap_b` on the records.
    pub identity_holds: bool,
}

/// Computes `(𝐀 ∪ 𝐏) ∩ (𝐁 ∪ 𝐐)` from the measurement records and checks it
/// against `(𝐀 ∩ 𝐐) ∪ (𝐏 ∩ 𝐁)`, which it must equal since `𝐀 ∩ 𝐁` and `𝐏 ∩ 𝐐` are empty.
pub fn epr_intersection(support: &Support, labels: [&str; 4]) -> Result<EprIntersection> {
    for l in labels {
        if support.observable(l).is_none() {
            return Err(EnsembleError::LabelAbsent(l.to_string()));
        }
    }
    let [a, b, p, q] = labels.map(|l| support.measured_set(l));
    let x: BTreeSet<usize> = a.union(&p).copied().collect();
    let y: BTreeSet<usize> = b.union(&q).copied().collect();
    let x_cap_y: BTreeSet<usize> = x.intersection(&y).copied().collect();
    let a_cap_q: BTreeSet<usize> = a.intersection(&q).copied().collect();
    let p_cap_b: BTreeSet<usize> = p.intersection(&b).copied().collect();
    let union: BTreeSet<usize> = a_cap_q.union(&p_cap_b).copied().collect();
    let identity_holds = union == x_cap_y && a.is_disjoint(&b) && p.is_disjoint(&q);
    Ok(EprIntersection {
        x_cap_y,
        a_cap_q,
        p_cap_b,
        identity_holds,
    })
}

/// Joint outcome distribution of a commuting set, conditioned on recorded outcomes.
struct JointSampler<'a> {
    state: &'a StateVector,
    registry: &'a BTreeMap<String, Observable>,
    /// Spectral projectors per requested observable, positive outcome first.
    projectors: Vec<[(Outcome, CMatrix); 2]>,
}

impl<'a> JointSampler<'a> {
    fn new(
        state: &'a StateVector,
        registry: &'a BTreeMap<String, Observable>,
        observables: &[&Observable],
    ) -> Result<Self> {
        let projectors = observables
            .iter()
            .map(|o| {
                let [pos, neg] = o.kind().outcomes();
                Ok([(pos, o.projector(pos)?), (neg, o.projector(neg)?)])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JointSampler {
            state,
            registry,
            projectors,
        })
    }

    fn tuple(&self, index: usize) -> Vec<Outcome> {
        let k = self.projectors.len();
        (0..k)
            .map(|i| {
                let bit = (index >> (k - 1 - i)) & 1;
                self.projectors[i][bit].0
            })
            .collect()
    }

    /// Cumulative distribution over outcome tuples in [`JointSampler::tuple`]
    /// order, or `None` if the recorded context has zero probability.
    fn cdf(&self, context: &[(String, Outcome)]) -> Option<Vec<f64>> {
        let mut phi: CVector = self.state.vec().clone();
        for (label, outcome) in context {
            let proj = self.registry.get(label)?.projector(*outcome).ok()?;
            phi = &proj * &phi;
        }
        let k = self.projectors.len();
        let mut weights = Vec::with_capacity(1 << k);
        for idx in 0..(1usize << k) {
            let mut v = phi.clone();
            for i in 0..k {
                let bit = (idx >> (k - 1 - i)) & 1;
                v = &self.projectors[i][bit].1 * &v;
            }
            weights.push(v.norm_sqr());
        }
        let total: f64 = weights.iter().sum();
        if total <= crate::quantum::MIN_CONDITIONING_PROBABILITY {
            return None;
        }
        let mut acc = 0.0;
        Some(
            weights
                .iter()
                .map(|w| {
                    acc += w / total;
                    acc
                })
                .collect(),
        )
    }
}

/// A partition of a support into blocks, each measuring one commuting group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPolicy {
    pub groups: Vec<(Vec<String>, f64)>,
}

impl MeasurementPolicy {
    pub fn new(groups: Vec<(Vec<String>, f64)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(EnsembleError::InvalidPolicy("no groups".into()));
        }
        for (labels, frac) in &groups {
            if labels.is_empty() {
                return Err(EnsembleError::InvalidPolicy("empty group".into()));
            }
            if !(0.0..=1.0).contains(frac) {
                return Err(EnsembleError::InvalidPolicy(format!(
                    "fraction {frac} outside [0, 1]"
                )));
            }
        }
        let total: f64 = groups.iter().map(|g| g.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EnsembleError::InvalidPolicy(format!(
                "fractions sum to {total}"
            )));
        }
        Ok(MeasurementPolicy { groups })
    }

    /// Parses `"A,Q:0.5;P,B:0.5"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (labels, frac) = part
                .rsplit_once(':')
                .ok_or_else(|| EnsembleError::InvalidPolicy(format!("missing ':' in '{part}'")))?;
            let frac: f64 = frac
                .trim()
                .parse()
                .map_err(|_| EnsembleError::InvalidPolicy(format!("bad fraction in '{part}'")))?;
            let labels: Vec<String> = labels
                .split(',')
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            groups.push((labels, frac));
        }
        Self::new(groups)
    }

    /// Checks that each group's observables pairwise commute.
    pub fn check_commuting<'a>(
        &self,
        resolve: impl Fn(&str) -> Option<&'a Observable>,
        tol: f64,
    ) -> Result<()> {
        for (labels, _) in &self.groups {
            let obs = labels
                .iter()
                .map(|l| resolve(l).ok_or_else(|| EnsembleError::LabelAbsent(l.clone())))
                .collect::<Result<Vec<_>>>()?;
            for (i, a) in obs.iter().enumerate() {
                for b in &obs[i + 1..] {
                    if !a.commutes_with(b, tol)? {
                        return Err(EnsembleError::NonCommutingRequest(
                            a.label().into(),
                            b.label().into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Contiguous id blocks per group, sized by largest remainder so the
    /// block sizes sum to `n`.
    pub fn allocate(&self, n: usize) -> Vec<(usize, Range<usize>)> {
        let exact: Vec<f64> = self.groups.iter().map(|g| g.1 * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let assigned: usize = sizes.iter().sum();
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&i, &j| {
            let ri = exact[i] - exact[i].floor();
            let rj = exact[j] - exact[j].floor();
            rj.partial_cmp(&ri)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        let mut start = 0;
        sizes
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let r = start..start + s;
                start += s;
                (i, r)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{CMatrix, DEFAULT_TOL};
    use crate::quantum::{Observable, Sign, Site, SpectrumKind};

    fn singlet() -> StateVector {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::new(
            CVector::from_real(&[0.0, s, -s, 0.0]).unwrap(),
            "singlet",
            DEFAULT_TOL,
        )
        .unwrap()
    }

    fn spins() -> [Observable; 4] {
        let z = CMatrix::from_real_diag(&[1.0, -1.0]);
        let x = CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let mk = |f: usize, m: &CMatrix, l: &str| {
            let site = Site::new(if f == 0 { "R_1" } else { "R_2" });
            Observable::local(&[2, 2], f, m, SpectrumKind::TwoValue, site, l, DEFAULT_TOL).unwrap()
        };
        [
            mk(0, &z, "A"),
            mk(0, &x, "B"),
            mk(1, &z, "P"),
            mk(1, &x, "Q"),
        ]
    }

    #[test]
    fn support_creation() {
        let s = create_support(singlet(), 10, 42).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s
            .specimens()
            .iter()
            .all(|x| x.measured.is_empty() && x.objective.is_empty()));
        assert!(matches!(
            create_support(singlet(), 0, 42),
            Err(EnsembleError::EmptySupport)
        ));
    }

    #[test]
    fn keyed_stream_is_stable() {
        let u = keyed_uniform(42, 7, "measure:A");
        assert_eq!(u, keyed_uniform(42, 7, "measure:A"));
        assert_ne!(u, keyed_uniform(42, 8, "measure:A"));
        assert_ne!(u, keyed_uniform(43, 7, "measure:A"));
        assert_ne!(u, keyed_uniform(42, 7, "measure:B"));
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn exclusion_enforced() {
        let [a, b, ..] = spins();
        let mut s = create_support(singlet(), 3, 1).unwrap();
        assert!(matches!(
            s.measure(&[0], &[&a, &b]),
            Err(EnsembleError::NonCommutingRequest(..))
        ));
        s.measure(&[0], &[&a]).unwrap();
        let err = s.measure(&[0, 1], &[&b]).unwrap_err();
        assert!(matches!(
            err,
            EnsembleError::ExclusionViolation { specimen: 0, .. }
        ));
        // the failed request left specimen 1 untouched
        assert!(s.specimen(1).unwrap().measured.is_empty());
        assert!(matches!(
            s.measure(&[5], &[&a]),
            Err(EnsembleError::UnknownSpecimen(5))
        ));
    }

    #[test]
    fn identity_always_yields_one() {
        let id = Observable::identity(4, Site::new("R_1"));
        let mut s = create_support(singlet(), 50, 3).unwrap();
        let ids: Vec<usize> = (0..50).collect();
        let out = s.measure(&ids, &[&id]).unwrap();
        assert!(out.iter().all(|(_, o)| o == &vec![1]));
    }

    #[test]
    fn sequential_measurements_condition_on_records() {
        let [a, _, p, _] = spins();
        let mut s = create_support(singlet(), 500, 9).unwrap();
        let ids: Vec<usize> = (0..500).collect();
        s.measure(&ids, &[&a]).unwrap();
        s.measure(&ids, &[&p]).unwrap();
        for spec in s.specimens() {
            assert_eq!(spec.measured["A"], -spec.measured["P"]);
        }
        // repeating a measurement reproduces the record
        let again = s.measure(&ids, &[&a]).unwrap();
        for (id, o) in again {
            assert_eq!(o[0], s.specimen(id).unwrap().measured["A"]);
        }
    }

    #[test]
    fn strict_extension_and_guard() {
        let [a, b, p, q] = spins();
        let psi = singlet();
        let rule_ap = CorrelationRule::certify(
            a.clone(),
            p.clone(),
            psi.clone(),
            Direction::Iff,
            Sign::Minus,
            DEFAULT_TOL,
        )
        .unwrap();
        let rule_bq = CorrelationRule::certify(
            b.clone(),
            q.clone(),
            psi.clone(),
            Direction::Iff,
            Sign::Minus,
            DEFAULT_TOL,
        )
        .unwrap();
        let mut s = create_support(psi, 3, 5).unwrap();
        s.measure(&[0], &[&p, &b]).unwrap();
        s.measure(&[1], &[&a]).unwrap();
        let out_ap = s.apply_strict_extension(&rule_ap).unwrap();
        // specimen 0: P measured, A refused because B was measured on particle 1
        assert_eq!(
            out_ap.refusals,
            vec![Refusal {
                specimen: 0,
                target: "A".into(),
                blocker: "B".into()
            }]
        );
        assert_eq!(out_ap.assigned, 1);
        assert_eq!(
            s.specimen(1).unwrap().objective["P"].value,
            -s.specimen(1).unwrap().measured["A"]
        );
        assert_eq!(s.specimen(1).unwrap().objective["P"].via, "A");
        let out_bq = s.apply_strict_extension(&rule_bq).unwrap();
        assert_eq!(
            out_bq.refusals,
            vec![Refusal {
                specimen: 0,
                target: "Q".into(),
                blocker: "P".into()
            }]
        );
        // specimen 2 never measured: nothing assigned
        assert!(s.specimen(2).unwrap().objective.is_empty());
        assert!(s.simultaneous_reality_set("P", "Q").is_empty());
    }

    #[test]
    fn strict_implication_only_on_plus_and_minus_sets() {
        // 0-1 pair on a product state |1⟩|1⟩ where both projectors are sure
        let psi = StateVector::new(CVector::basis(4, 3), "11", DEFAULT_TOL).unwrap();
        let one = CMatrix::from_real_diag(&[0.0, 1.0]);
        let e = Observable::local(
            &[2, 2],
            0,
            &one,
            SpectrumKind::ZeroOne,
            Site::new("L"),
            "e",
            DEFAULT_TOL,
        )
        .unwrap();
        let f = Observable::local(
            &[2, 2],
            1,
            &one,
            SpectrumKind::ZeroOne,
            Site::new("R"),
            "f",
            DEFAULT_TOL,
        )
        .unwrap();
        let rule = CorrelationRule::certify(
            e.clone(),
            f.clone(),
            psi.clone(),
            Direction::Implies,
            Sign::Plus,
            DEFAULT_TOL,
        )
        .unwrap();
        let mut s = create_support(psi, 2, 1).unwrap();
        s.measure(&[0], &[&e]).unwrap();
        s.measure(&[1], &[&f]).unwrap();
        let out = s.apply_strict_extension(&rule).unwrap();
        // specimen 0 ∈ E₊ gains f = 1; specimen 1 has f = 1, not in F₋, gains nothing
        assert_eq!(out.assigned, 1);
        assert_eq!(s.specimen(0).unwrap().objective["f"].value, 1);
        assert!(!s.specimen(1).unwrap().objective.contains_key("e"));
    }

    #[test]
    fn wide_extension_covers_everything() {
        let [a, b, p, q] = spins();
        let psi = singlet();
        let rule_ap =
            CorrelationRule::certify(a, p, psi.clone(), Direction::Iff, Sign::Minus, DEFAULT_TOL)
                .unwrap();
        let rule_bq =
            CorrelationRule::certify(b, q, psi.clone(), Direction::Iff, Sign::Minus, DEFAULT_TOL)
                .unwrap();
        let mut s = create_support(psi, 20, 11).unwrap();
        s.apply_wide_extension(&rule_ap).unwrap();
        s.apply_wide_extension(&rule_bq).unwrap();
        for spec in s.specimens() {
            assert_eq!(spec.objective["A"].value, -spec.objective["P"].value);
            assert_eq!(spec.objective["B"].value, -spec.objective["Q"].value);
        }
        assert_eq!(s.simultaneous_reality_set("P", "Q").len(), 20);
    }

    #[test]
    fn single_specimen_wide() {
        let [a, _, p, _] = spins();
        let psi = singlet();
        let rule =
            CorrelationRule::certify(a, p, psi.clone(), Direction::Iff, Sign::Minus, DEFAULT_TOL)
                .unwrap();
        let mut s = create_support(psi, 1, 0).unwrap();
        let out = s.apply_wide_extension(&rule).unwrap();
        assert_eq!(out.assigned, 2);
        assert_eq!(s.simultaneous_reality_set("A", "P").len(), 1);
    }

    #[test]
    fn rule_state_must_match() {
        let [a, _, p, _] = spins();
        let psi = singlet();
        let rule =
            CorrelationRule::certify(a, p, psi, Direction::Iff, Sign::Minus, DEFAULT_TOL).unwrap();
        let other = StateVector::new(CVector::basis(4, 0), "up-up", DEFAULT_TOL).unwrap();
        let mut s = create_support(other, 2, 0).unwrap();
        assert!(matches!(
            s.apply_strict_extension(&rule),
            Err(EnsembleError::RuleStateMismatch { .. })
        ));
    }

    #[test]
    fn conflicting_assignment_aborts() {
        let [a, _, p, _] = spins();
        let psi = singlet();
        let rule = CorrelationRule::certify(
            a.clone(),
            p.clone(),
            psi.clone(),
            Direction::Iff,
            Sign::Minus,
            DEFAULT_TOL,
        )
        .unwrap();
        let mut s = create_support(psi, 1, 0).unwrap();
        s.record_outcome(0, &a, 1).unwrap();
        s.record_outcome(0, &p, 1).unwrap();
        assert!(matches!(
            s.apply_wide_extension(&rule),
            Err(EnsembleError::ConflictingValue { .. })
        ));
        assert!(matches!(
            s.record_outcome(0, &a, 0),
            Err(EnsembleError::BadOutcome { .. })
        ));
    }

    #[test]
    fn epr_intersection_sets() {
        let [a, b, p, q] = spins();
        let obs = [a, b, p, q];
        let resolve = |l: &str| obs.iter().find(|o| o.label() == l);
        let mut s = create_support(singlet(), 10, 2).unwrap();
        for o in &obs {
            s.register(o).unwrap();
        }
        assert!(epr_intersection(&s, ["A", "B", "P", "Q"])
            .unwrap()
            .x_cap_y
            .is_empty());
        let policy = MeasurementPolicy::parse("A,Q:0.5;P,B:0.5").unwrap();
        s.measure_policy(&policy, resolve).unwrap();
        let r = epr_intersection(&s, ["A", "B", "P", "Q"]).unwrap();
        assert_eq!(r.x_cap_y, s.all_ids());
        assert!(r.identity_holds);
        assert_eq!(r.a_cap_q.len(), 5);

        let mut s2 = create_support(singlet(), 10, 2).unwrap();
        s2.measure_policy(&MeasurementPolicy::parse("A,P:1").unwrap(), resolve)
            .unwrap();
        assert!(matches!(
            epr_intersection(&s2, ["A", "B", "P", "Q"]),
            Err(EnsembleError::LabelAbsent(_))
        ));
        s2.register(&obs[1]).unwrap();
        s2.register(&obs[3]).unwrap();
        assert!(epr_intersection(&s2, ["A", "B", "P", "Q"])
            .unwrap()
            .x_cap_y
            .is_empty());
    }

    #[test]
    fn policy_parsing_and_allocation() {
        let p = MeasurementPolicy::parse("A,Q:0.5; P,B:0.5").unwrap();
        assert_eq!(p.groups[1].0, vec!["P".to_string(), "B".to_string()]);
        assert!(MeasurementPolicy::parse("A:0.5").is_err());
        assert!(MeasurementPolicy::parse("A:1.5;B:-0.5").is_err());
        assert!(MeasurementPolicy::parse("A").is_err());
        let thirds =
            MeasurementPolicy::parse("A:0.3333333333333;B:0.3333333333333;P:0.3333333333334")
                .unwrap();
        let blocks = thirds.allocate(10);
        let sizes: Vec<usize> = blocks.iter().map(|(_, r)| r.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 10);
        assert_eq!(blocks.last().unwrap().1.end, 10);
        let [a, b, ..] = spins();
        let obs = [a, b];
        let bad = MeasurementPolicy::parse("A,B:1").unwrap();
        assert!(bad
            .check_commuting(|l| obs.iter().find(|o| o.label() == l), DEFAULT_TOL)
            .is_err());
    }

    #[test]
    fn ndjson_dump_shape() {
        let [a, _, p, _] = spins();
        let psi = singlet();
        let rule = CorrelationRule::certify(
            a.clone(),
            p,
            psi.clone(),
            Direction::Iff,
            Sign::Minus,
            DEFAULT_TOL,
        )
        .unwrap();
        let mut s = create_support(psi, 2, 4).unwrap();
        s.record_outcome(0, &a, 1).unwrap();
        s.apply_strict_extension(&rule).unwrap();
        let mut buf = Vec::new();
        s.write_ndjson(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"id":0,"measured":{"A":1},"objective":{"A":{"value":1,"via":"A"},"P":{"value":-1,"via":"A"}}}"#
        );
        assert_eq!(lines[1], r#"{"id":1,"measured":{},"objective":{}}"#);
        let mut csv_buf = Vec::new();
        s.write_csv(&mut csv_buf).unwrap();
        let csv_text = String::from_utf8(csv_buf).unwrap();
        assert_eq!(
            csv_text.lines().next().unwrap(),
            "id,m_A,o_A,via_A,m_P,o_P,via_P"
        );
        assert_eq!(csv_text.lines().nth(1).unwrap(), "0,1,1,A,,-1,A");
    }
}
