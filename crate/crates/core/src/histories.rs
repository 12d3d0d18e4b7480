//! Consistent histories over the ideal experiment.
//!
//! A [`HistoryFamily`] is a projective decomposition of the identity at each
//! of a few ordered times; its elementary histories pick one projector per
//! time. Consistency is weak decoherence: `Re Tr(C_h ρ C_k†) = 0` for every
//! pair of distinct elementary histories, with `C_h` the time-ordered
//! product of the events of `h` (latest leftmost).
//!
//! A [`FamilySupport`] binds a family to concrete specimens: each member
//! specimen is assigned exactly one elementary history, the one that occurs
//! for it.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ensemble::{keyed_uniform, EnsembleError, Support};
use crate::experiments::{build_ideal, ExperimentError, Extension, IdealSetup};
use crate::linalg::{is_projector, CMatrix, LinalgError};
use crate::quantum::{QuantumError, StateVector};

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("a history needs at least one event")]
    EmptyHistory,
    #[error("event '{0}' is not a projector")]
    NotProjector(String),
    #[error("time labels must be strictly increasing")]
    UnorderedTimes,
    #[error("mismatched time labels {0:?} vs {1:?}")]
    TimeMismatch(Vec<u32>, Vec<u32>),
    #[error("decomposition at time {time} is not a resolution of the identity: {reason}")]
    BadDecomposition { time: u32, reason: String },
    #[error("density operator invalid: {0}")]
    BadDensity(String),
    #[error("family is not consistent under the given density operator")]
    Inconsistent,
    #[error("history {0} cannot be expressed in this family")]
    NotInFamily(String),
    #[error("support state does not match the density operator")]
    StateMismatch,
    #[error("elementary history index {0} out of range")]
    BadIndex(usize),
}

pub type Result<T> = std::result::Result<T, HistoryError>;

#[derive(Clone, Debug)]
pub struct DensityOperator {
    op: CMatrix,
}

impl DensityOperator {
    pub fn new(op: CMatrix, tol: f64) -> Result<Self> {
        if !op.is_hermitian(tol)? {
            return Err(HistoryError::BadDensity("not self-adjoint".into()));
        }
        if !op.is_positive_semidefinite(tol)? {
            return Err(HistoryError::BadDensity("not positive semidefinite".into()));
        }
        if op.trace()?.re <= tol {
            return Err(HistoryError::BadDensity("trace is not positive".into()));
        }
        Ok(DensityOperator { op })
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &StateVector) -> Self {
        DensityOperator {
            op: psi.vec().outer(psi.vec()),
        }
    }

    pub fn op(&self) -> &CMatrix {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.rows()
    }

    pub fn trace(&self) -> f64 {
        self.op.trace().expect("square").re
    }
}

#[derive(Clone, Debug)]
pub struct Event {
    pub time: u32,
    pub label: String,
    pub op: CMatrix,
}

impl Event {
    pub fn new(time: u32, label: impl Into<String>, op: CMatrix) -> Self {
        Event {
            time,
            label: label.into(),
            op,
        }
    }
}

/// A time-ordered sequence of events.
#[derive(Clone, Debug)]
pub struct History {
    events: Vec<Event>,
}

impl History {
    pub fn new(events: Vec<Event>, tol: f64) -> Result<Self> {
        if events.is_empty() {
            return Err(HistoryError::EmptyHistory);
        }
        if events.windows(2).any(|w| w[0].time >= w[1].time) {
            return Err(HistoryError::UnorderedTimes);
        }
        let dim = events[0].op.rows();
        for e in &events {
            if e.op.rows() != dim || !is_projector(&e.op, tol)? {
                return Err(HistoryError::NotProjector(e.label.clone()));
            }
        }
        Ok(History { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn times(&self) -> Vec<u32> {
        self.events.iter().map(|e| e.time).collect()
    }

    pub fn dim(&self) -> usize {
        self.events[0].op.rows()
    }

    pub fn label(&self) -> String {
        let inner: Vec<&str> = self.events.iter().map(|e| e.label.as_str()).collect();
        format!("({})", inner.join(","))
    }
}

/// `C_h = E_n ⋯ E_1`.
pub fn chain_operator(h: &History) -> CMatrix {
    let mut it = h.events.iter();
    let first = it.next().expect("nonempty history").op.clone();
    it.fold(first, |acc, e| &e.op * &acc)
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(LinalgError::DimensionMismatch(format!("dimension {a} vs {b}")).into());
    }
    Ok(())
}

fn functional_of_chains(c1: &CMatrix, c2: &CMatrix, rho: &DensityOperator) -> f64 {
    (&(c1 * rho.op()) * &c2.adjoint())
        .trace()
        .expect("square")
        .re
}

/// `Re Tr(C_{h1} ρ C_{h2}†)`.
pub fn decoherence_functional(h1: &History, h2: &History, rho: &DensityOperator) -> Result<f64> {
    check_dims(h1.dim(), rho.dim())?;
    check_dims(h2.dim(), rho.dim())?;
    Ok(functional_of_chains(
        &chain_operator(h1),
        &chain_operator(h2),
        rho,
    ))
}

/// Probability of `h` in its minimal family, which must be consistent under `rho`.
pub fn history_probability(h: &History, rho: &DensityOperator, tol: f64) -> Result<f64> {
    let fam = minimal_family(h, tol)?;
    if !is_consistent(&fam, rho, tol)? {
        return Err(HistoryError::Inconsistent);
    }
    check_dims(h.dim(), rho.dim())?;
    let c = chain_operator(h);
    Ok(functional_of_chains(&c, &c, rho) / rho.trace())
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub time: u32,
    pub projectors: Vec<(String, CMatrix)>,
}

/// Projective decompositions of the identity at ordered times.
#[derive(Clone, Debug)]
pub struct HistoryFamily {
    decompositions: Vec<Decomposition>,
}

impl HistoryFamily {
    pub fn new(decompositions: Vec<Decomposition>, tol: f64) -> Result<Self> {
        if decompositions.is_empty() {
            return Err(HistoryError::EmptyHistory);
        }
        if decompositions.windows(2).any(|w| w[0].time >= w[1].time) {
            return Err(HistoryError::UnorderedTimes);
        }
        let dim = decompositions[0]
            .projectors
            .first()
            .map(|p| p.1.rows())
            .unwrap_or(0);
        let bad = |time: u32, reason: &str| HistoryError::BadDecomposition {
            time,
            reason: reason.into(),
        };
        for d in &decompositions {
            if d.projectors.is_empty() {
                return Err(bad(d.time, "empty"));
            }
            let mut total = CMatrix::zeros(dim, dim);
            for (i, (label, p)) in d.projectors.iter().enumerate() {
                if p.rows() != dim || !is_projector(p, tol)? {
                    return Err(HistoryError::NotProjector(label.clone()));
                }
                for (_, q) in &d.projectors[i + 1..] {
                    if (p * q).frobenius_norm() > tol {
                        return Err(bad(d.time, "projectors are not mutually orthogonal"));
                    }
                }
                total = &total + p;
            }
            if !total.is_identity(tol) {
                return Err(bad(d.time, "projectors do not sum to the identity"));
            }
        }
        Ok(HistoryFamily { decompositions })
    }

    pub fn decompositions(&self) -> &[Decomposition] {
        &self.decompositions
    }

    pub fn times(&self) -> Vec<u32> {
        self.decompositions.iter().map(|d| d.time).collect()
    }

    pub fn dim(&self) -> usize {
        self.decompositions[0].projectors[0].1.rows()
    }

    pub fn elementary_count(&self) -> usize {
        self.decompositions
            .iter()
            .map(|d| d.projectors.len())
            .product()
    }

    /// Projector choice per time for elementary history `index`; the first
    /// time is the most significant digit.
    pub fn choice(&self, mut index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.decompositions.len()];
        for (k, d) in self.decompositions.iter().enumerate().rev() {
            digits[k] = index % d.projectors.len();
            index /= d.projectors.len();
        }
        digits
    }

    pub fn index_of(&self, choice: &[usize]) -> usize {
        self.decompositions
            .iter()
            .zip(choice)
            .fold(0, |acc, (d, &c)| acc * d.projectors.len() + c)
    }

    pub fn elementary(&self, index: usize) -> History {
        let events = self
            .decompositions
            .iter()
            .zip(self.choice(index))
            .map(|(d, c)| Event::new(d.time, d.projectors[c].0.clone(), d.projectors[c].1.clone()))
            .collect();
        History { events }
    }

    pub fn elementary_histories(&self) -> Vec<History> {
        (0..self.elementary_count())
            .map(|i| self.elementary(i))
            .collect()
    }

    pub fn elementary_labels(&self) -> Vec<String> {
        self.elementary_histories()
            .iter()
            .map(History::label)
            .collect()
    }

    /// Matrix of `Re Tr(C_i ρ C_j†)` over elementary histories.
    pub fn decoherence_matrix(&self, rho: &DensityOperator) -> Result<Vec<Vec<f64>>> {
        check_dims(self.dim(), rho.dim())?;
        let chains: Vec<CMatrix> = self
            .elementary_histories()
            .iter()
            .map(chain_operator)
            .collect();
        let rho_c: Vec<CMatrix> = chains.iter().map(|c| c * rho.op()).collect();
        Ok(rho_c
            .iter()
            .map(|left| {
                chains
                    .iter()
                    .map(|right| (left * &right.adjoint()).trace().expect("square").re)
                    .collect()
            })
            .collect())
    }

    /// Probabilities of the elementary histories, `Tr(C ρ C†) / Tr ρ`.
    /// Fails unless the family is consistent.
    pub fn probabilities(&self, rho: &DensityOperator, tol: f64) -> Result<Vec<f64>> {
        let d = self.decoherence_matrix(rho)?;
        if !off_diagonal_vanishes(&d, tol) {
            return Err(HistoryError::Inconsistent);
        }
        let n = rho.trace();
        Ok((0..d.len()).map(|i| d[i][i] / n).collect())
    }

    /// Whether `h` is a coarse-graining expressible in this family, i.e.
    /// each of its events is a sum of projectors of the same-time decomposition.
    fn expresses(&self, h: &History, tol: f64) -> Result<Vec<Vec<bool>>> {
        if h.times() != self.times() {
            return Err(HistoryError::TimeMismatch(h.times(), self.times()));
        }
        let mut out = Vec::new();
        for (e, d) in h.events.iter().zip(&self.decompositions) {
            let under = projectors_under(&e.op, d, tol);
            let mut total = CMatrix::zeros(self.dim(), self.dim());
            for (k, &u) in under.iter().enumerate() {
                if u {
                    total = &total + &d.projectors[k].1;
                }
            }
            if total.distance(&e.op)? > tol {
                return Err(HistoryError::NotInFamily(h.label()));
            }
            out.push(under);
        }
        Ok(out)
    }

    /// Dump with real/imaginary entry pairs.
    pub fn dump(&self, rho: &DensityOperator, tol: f64) -> Result<FamilyDump> {
        let decoherence = self.decoherence_matrix(rho)?;
        let consistent = off_diagonal_vanishes(&decoherence, tol);
        let decompositions = self
            .decompositions
            .iter()
            .map(|d| DecompositionDump {
                time: d.time,
                projectors: d
                    .projectors
                    .iter()
                    .map(|(label, m)| ProjectorDump {
                        label: label.clone(),
                        matrix: (0..m.rows())
                            .map(|r| {
                                (0..m.cols())
                                    .map(|c| [m.get(r, c).re, m.get(r, c).im])
                                    .collect()
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Ok(FamilyDump {
            decompositions,
            elementary_histories: self.elementary_labels(),
            consistent,
            decoherence,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectorDump {
    pub label: String,
    /// Row-major `[re, im]` pairs.
    pub matrix: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionDump {
    pub time: u32,
    pub projectors: Vec<ProjectorDump>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyDump {
    pub decompositions: Vec<DecompositionDump>,
    pub elementary_histories: Vec<String>,
    pub consistent: bool,
    pub decoherence: Vec<Vec<f64>>,
}

fn off_diagonal_vanishes(d: &[Vec<f64>], tol: f64) -> bool {
    d.iter().enumerate().all(|(i, row)| {
        row.iter()
            .enumerate()
            .all(|(j, x)| i == j || x.abs() <= tol)
    })
}

/// Flags the projectors `f` of `d` lying under `p` (`p f = f`).
fn projectors_under(p: &CMatrix, d: &Decomposition, tol: f64) -> Vec<bool> {
    d.projectors
        .iter()
        .map(|(_, f)| (p * f).distance(f).is_ok_and(|x| x <= tol))
        .collect()
}

fn complement_label(label: &str) -> String {
    format!("1-{label}")
}

/// The smallest family containing `h`: `{E, 1−E}` at each time, or `{1}`
/// where the event is the identity.
pub fn minimal_family(h: &History, tol: f64) -> Result<HistoryFamily> {
    let dim = h.dim();
    let id = CMatrix::identity(dim);
    let decompositions = h
        .events
        .iter()
        .map(|e| {
            let projectors = if e.op.is_identity(tol) {
                vec![("1".to_string(), id.clone())]
            } else {
                vec![
                    (e.label.clone(), e.op.clone()),
                    (complement_label(&e.label), &id - &e.op),
                ]
            };
            Decomposition {
                time: e.time,
                projectors,
            }
        })
        .collect();
    HistoryFamily::new(decompositions, tol)
}

/// Weak decoherence of all pairs of distinct elementary histories.
pub fn is_consistent(fam: &HistoryFamily, rho: &DensityOperator, tol: f64) -> Result<bool> {
    Ok(off_diagonal_vanishes(&fam.decoherence_matrix(rho)?, tol))
}

/// Every projector of `coarse` is a sum of same-time projectors of `fine`.
pub fn is_refinement(coarse: &HistoryFamily, fine: &HistoryFamily, tol: f64) -> Result<bool> {
    if coarse.times() != fine.times() {
        return Err(HistoryError::TimeMismatch(coarse.times(), fine.times()));
    }
    check_dims(coarse.dim(), fine.dim())?;
    for (c, f) in coarse.decompositions.iter().zip(&fine.decompositions) {
        for (_, p) in &c.projectors {
            let under = projectors_under(p, f, tol);
            let mut total = CMatrix::zeros(coarse.dim(), coarse.dim());
            for (k, &u) in under.iter().enumerate() {
                if u {
                    total = &total + &f.projectors[k].1;
                }
            }
            if total.distance(p)? > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Common refinement by products, when the decompositions commute at every
/// time. Zero products are dropped.
pub fn product_family(
    f1: &HistoryFamily,
    f2: &HistoryFamily,
    tol: f64,
) -> Result<Option<HistoryFamily>> {
    if f1.times() != f2.times() {
        return Err(HistoryError::TimeMismatch(f1.times(), f2.times()));
    }
    check_dims(f1.dim(), f2.dim())?;
    let mut decompositions = Vec::new();
    for (d1, d2) in f1.decompositions.iter().zip(&f2.decompositions) {
        let mut projectors = Vec::new();
        for (l1, p) in &d1.projectors {
            for (l2, q) in &d2.projectors {
                let pq = p * q;
                if pq.distance(&(q * p))? > tol {
                    return Ok(None);
                }
                if pq.frobenius_norm() <= tol {
                    continue;
                }
                let label = match (l1.as_str(), l2.as_str()) {
                    ("1", l) | (l, "1") => l.to_string(),
                    _ if l1 == l2 => l1.clone(),
                    _ => format!("{l1}*{l2}"),
                };
                if projectors
                    .iter()
                    .any(|(_, m): &(String, CMatrix)| m.distance(&pq).is_ok_and(|x| x <= tol))
                {
                    continue;
                }
                projectors.push((label, pq));
            }
        }
        decompositions.push(Decomposition {
            time: d1.time,
            projectors,
        });
    }
    Ok(Some(HistoryFamily::new(decompositions, tol)?))
}

/// Two families are compatible when their product refinement exists and is
/// consistent under `rho`.
pub fn are_compatible(
    f1: &HistoryFamily,
    f2: &HistoryFamily,
    rho: &DensityOperator,
    tol: f64,
) -> Result<bool> {
    match product_family(f1, f2, tol)? {
        Some(joint) => is_consistent(&joint, rho, tol),
        None => Ok(false),
    }
}

/// A family bound to concrete specimens.
#[derive(Clone, Debug)]
pub struct FamilySupport {
    family: HistoryFamily,
    /// specimen id → index of the elementary history occurring for it
    occurrence: BTreeMap<usize, usize>,
}

impl FamilySupport {
    pub fn from_occurrences(
        family: HistoryFamily,
        occurrence: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        let count = family.elementary_count();
        if let Some((_, &bad)) = occurrence.iter().find(|(_, &i)| i >= count) {
            return Err(HistoryError::BadIndex(bad));
        }
        Ok(FamilySupport { family, occurrence })
    }

    pub fn family(&self) -> &HistoryFamily {
        &self.family
    }

    /// `b(𝒞)`.
    pub fn members(&self) -> BTreeSet<usize> {
        self.occurrence.keys().copied().collect()
    }

    pub fn occurrence(&self) -> &BTreeMap<usize, usize> {
        &self.occurrence
    }

    /// `b_1(h)` for a history `h` expressible in the family.
    pub fn b1(&self, h: &History, tol: f64) -> Result<BTreeSet<usize>> {
        let under = self.family.expresses(h, tol)?;
        Ok(self
            .occurrence
            .iter()
            .filter(|(_, &idx)| {
                self.family
                    .choice(idx)
                    .iter()
                    .zip(&under)
                    .all(|(&c, flags)| flags[c])
            })
            .map(|(&id, _)| id)
            .collect())
    }

    /// `b_0(h)`.
    pub fn b0(&self, h: &History, tol: f64) -> Result<BTreeSet<usize>> {
        let b1 = self.b1(h, tol)?;
        Ok(self.members().difference(&b1).copied().collect())
    }

    /// Occurrences in a coarser family implied by the occurrences here.
    pub fn coarse_grain(&self, coarse: &HistoryFamily, tol: f64) -> Result<FamilySupport> {
        if !is_refinement(coarse, &self.family, tol)? {
            return Err(HistoryError::NotInFamily("coarse family".into()));
        }
        // fine projector k at time t sits under exactly one coarse projector
        let maps: Vec<Vec<usize>> = coarse
            .decompositions
            .iter()
            .zip(&self.family.decompositions)
            .map(|(c, f)| {
                f.projectors
                    .iter()
                    .map(|(_, fp)| {
                        c.projectors
                            .iter()
                            .position(|(_, cp)| (cp * fp).distance(fp).is_ok_and(|x| x <= tol))
                            .expect("refinement")
                    })
                    .collect()
            })
            .collect();
        let occurrence = self
            .occurrence
            .iter()
            .map(|(&id, &idx)| {
                let choice: Vec<usize> = self
                    .family
                    .choice(idx)
                    .iter()
                    .zip(&maps)
                    .map(|(&c, m)| m[c])
                    .collect();
                (id, coarse.index_of(&choice))
            })
            .collect();
        Ok(FamilySupport {
            family: coarse.clone(),
            occurrence,
        })
    }
}

/// Assigns every specimen of `support` the elementary history that occurs
/// for it, sampled from the family's probabilities with the support's keyed
/// stream.
pub fn bind_support(
    fam: &HistoryFamily,
    support: &Support,
    rho: &DensityOperator,
    tol: f64,
) -> Result<FamilySupport> {
    let psi = support.state();
    check_dims(psi.dim(), rho.dim())?;
    let overlap = psi.expectation(rho.op())?.re;
    if (overlap - rho.trace()).abs() > tol.max(1e-9) {
        return Err(HistoryError::StateMismatch);
    }
    let probs = fam.probabilities(rho, tol)?;
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    let key = format!("history:{}", fam.elementary_labels().join("|"));
    let occurrence = (0..support.len())
        .map(|id| {
            let u = keyed_uniform(support.seed(), id, &key) * acc;
            let idx = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            (id, idx)
        })
        .collect();
    Ok(FamilySupport {
        family: fam.clone(),
        occurrence,
    })
}

pub const T1: u32 = 1;
pub const T2: u32 = 2;

/// The histories of the ideal experiment at times `t_1 < t_2`.
pub struct IdealHistories {
    pub setup: IdealSetup,
    pub rho: DensityOperator,
    pub h_t: History,
    pub h_y: History,
    pub h_e: History,
    pub h_g: History,
    pub h_a1: History,
}

impl IdealHistories {
    pub fn new(tol: f64) -> Result<Self> {
        let setup = build_ideal(tol)?;
        let rho = DensityOperator::pure(&setup.state);
        let id = CMatrix::identity(setup.state.dim());
        let two = |l1: &str, m1: &CMatrix, l2: &str, m2: &CMatrix| {
            History::new(
                vec![
                    Event::new(T1, l1, m1.clone()),
                    Event::new(T2, l2, m2.clone()),
                ],
                tol,
            )
        };
        let (e, g, t, y) = (setup.e.op(), setup.g.op(), setup.t.op(), setup.y.op());
        Ok(IdealHistories {
            h_t: two("1", &id, "T", t)?,
            h_y: two("1", &id, "Y", y)?,
            h_e: two("E", e, "T", t)?,
            h_g: two("G", g, "Y", y)?,
            h_a1: two("1", &id, "A_II^1", &setup.a_ii_global(1))?,
            setup,
            rho,
        })
    }
}

pub const VERDICT_CONTRADICTION: &str = "cqt_condition_i_violated";
pub const VERDICT_NO_WITNESS: &str = "no_witness_in_sample";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoriesCheck {
    pub name: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoriesReport {
    pub experiment: &'static str,
    pub n: usize,
    pub seed: u64,
    pub extension: Extension,
    pub frequencies: BTreeMap<String, f64>,
    /// Witnesses: specimens in `b_1(h_T) ∩ b_1(h_Y)` placed in both `b_1(h_E)` and `b_1(h_G)`.
    pub simultaneous_set_size: usize,
    /// Objectification: `b(𝒞(h_E)) ∩ b_1(h_T) ⊆ b_1(h_E)` (and likewise for `G`, `Y`).
    pub table_conformance: bool,
    pub verdict: String,
    pub counts: BTreeMap<String, usize>,
    pub families_consistent: BTreeMap<String, bool>,
    pub compatible_e_g: bool,
    pub compatible_t_y: bool,
    pub incompatibility_flag: bool,
    pub intersection_nonempty: bool,
    pub condition_i_violated: bool,
    pub witness_fraction: f64,
    /// `⟨ψ|(1 ⊗ A_II^1)ψ⟩`
    pub expected_witness_fraction: f64,
    pub probability_sums: BTreeMap<String, f64>,
    pub checks: Vec<HistoriesCheck>,
}

impl HistoriesReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Builds the histories of the ideal experiment, binds the (compatible)
/// `T`/`Y` families to a support, lets the `T`, `Y` occurrences act as
/// actual measurements and applies the strict extension, then reports the
/// specimens that end up in both `b(𝒞(h_E))` and `b(𝒞(h_G))` although the
/// two families are incompatible.
pub fn contradiction_demo(n: usize, seed: u64, tol: f64) -> Result<HistoriesReport> {
    Ok(run_histories(n, seed, Extension::Strict, tol)?.0)
}

/// [`contradiction_demo`] with a choice of extension, also returning the
/// support carrying the revealed `T`, `Y` outcomes and the inferred `E`, `G`.
pub fn run_histories(
    n: usize,
    seed: u64,
    extension: Extension,
    tol: f64,
) -> Result<(HistoriesReport, Support)> {
    let hs = IdealHistories::new(tol)?;
    let setup = &hs.setup;
    let rho = &hs.rho;

    let fam_t = minimal_family(&hs.h_t, tol)?;
    let fam_y = minimal_family(&hs.h_y, tol)?;
    let fam_e = minimal_family(&hs.h_e, tol)?;
    let fam_g = minimal_family(&hs.h_g, tol)?;
    let mut families_consistent = BTreeMap::new();
    let mut probability_sums = BTreeMap::new();
    for (name, fam) in [
        ("C(h_T)", &fam_t),
        ("C(h_Y)", &fam_y),
        ("C(h_E)", &fam_e),
        ("C(h_G)", &fam_g),
    ] {
        let ok = is_consistent(fam, rho, tol)?;
        families_consistent.insert(name.to_string(), ok);
        if ok {
            probability_sums.insert(name.to_string(), fam.probabilities(rho, tol)?.iter().sum());
        }
    }
    let compatible_e_g = are_compatible(&fam_e, &fam_g, rho, tol)?;
    let compatible_t_y = are_compatible(&fam_t, &fam_y, rho, tol)?;
    let refines = is_refinement(&fam_t, &fam_e, tol)? && is_refinement(&fam_y, &fam_g, tol)?;

    let joint = product_family(&fam_t, &fam_y, tol)?.ok_or(HistoryError::Inconsistent)?;
    let mut support = Support::new(setup.state.clone(), n, seed, tol)?;
    let bound = bind_support(&joint, &support, rho, tol)?;
    let bind_t = bound.coarse_grain(&fam_t, tol)?;
    let bind_y = bound.coarse_grain(&fam_y, tol)?;
    let b1_t = bind_t.b1(&hs.h_t, tol)?;
    let b1_y = bind_y.b1(&hs.h_y, tol)?;
    let b1_a1 = bound.b1(&hs.h_a1, tol)?;
    let ty: BTreeSet<usize> = b1_t.intersection(&b1_y).copied().collect();
    // (I): T·Y = A_II^1, so occurrence of both means h_A1 occurs, and back
    let sample_space_ok = ty == b1_a1;

    for id in 0..n {
        support.record_outcome(id, &setup.t, if b1_t.contains(&id) { 1 } else { 0 })?;
        support.record_outcome(id, &setup.y, if b1_y.contains(&id) { 1 } else { 0 })?;
    }
    support.apply_extension(&setup.rule_et, extension)?;
    support.apply_extension(&setup.rule_gy, extension)?;

    let objectified = |fam: &HistoryFamily, first: &str, second: &str| -> Result<FamilySupport> {
        let mut occ = BTreeMap::new();
        for spec in support.specimens() {
            if let (Some(v1), Some(v2)) = (spec.objective.get(first), spec.value_of(second)) {
                let choice = [usize::from(v1.value != 1), usize::from(v2 != 1)];
                occ.insert(spec.id, fam.index_of(&choice));
            }
        }
        FamilySupport::from_occurrences(fam.clone(), occ)
    };
    let bind_e = objectified(&fam_e, "E", "T")?;
    let bind_g = objectified(&fam_g, "G", "Y")?;
    let b1_e = bind_e.b1(&hs.h_e, tol)?;
    let b1_g = bind_g.b1(&hs.h_g, tol)?;
    let members_e = bind_e.members();
    let members_g = bind_g.members();
    let intersection: BTreeSet<usize> = members_e.intersection(&members_g).copied().collect();
    let witnesses: BTreeSet<usize> = ty
        .iter()
        .copied()
        .filter(|id| b1_e.contains(id) && b1_g.contains(id) && intersection.contains(id))
        .collect();

    let objectification = members_e.intersection(&b1_t).all(|id| b1_e.contains(id))
        && members_g.intersection(&b1_y).all(|id| b1_g.contains(id));
    // (iii): finer family, smaller support
    let monotone = members_e.is_subset(&bind_t.members()) && members_g.is_subset(&bind_y.members());

    let expected = setup.state.expectation(&setup.a_ii_global(1))?.re;
    let has_witness = !witnesses.is_empty();
    let incompatibility_flag = !compatible_e_g;
    let condition_i_violated = incompatibility_flag && !intersection.is_empty();

    let mut counts = BTreeMap::new();
    counts.insert("b1_T".to_string(), b1_t.len());
    counts.insert("b1_Y".to_string(), b1_y.len());
    counts.insert("b1_T&b1_Y".to_string(), ty.len());
    counts.insert("b1_A1".to_string(), b1_a1.len());
    counts.insert("b1_E".to_string(), b1_e.len());
    counts.insert("b1_G".to_string(), b1_g.len());
    counts.insert("b_E&b_G".to_string(), intersection.len());
    counts.insert("witnesses".to_string(), witnesses.len());
    let frequencies = counts
        .iter()
        .map(|(k, v)| (k.clone(), *v as f64 / n as f64))
        .collect();

    let all_consistent = families_consistent.values().all(|&b| b);
    let mut checks = vec![
        ("families_consistent", all_consistent),
        ("families_E_G_incompatible", incompatibility_flag),
        ("families_T_Y_compatible", compatible_t_y),
        ("refinements", refines),
        ("sample_space_condition", sample_space_ok),
        ("objectification_condition", objectification),
        ("support_monotonicity", monotone),
    ];
    if has_witness {
        checks.push(("contradiction_flagged", condition_i_violated));
    }
    let checks = checks
        .into_iter()
        .map(|(name, pass)| HistoriesCheck {
            name: name.into(),
            pass,
        })
        .collect();

    let report = HistoriesReport {
        experiment: "histories",
        n,
        seed,
        extension,
        frequencies,
        simultaneous_set_size: witnesses.len(),
        table_conformance: objectification,
        verdict: if has_witness {
            VERDICT_CONTRADICTION
        } else {
            VERDICT_NO_WITNESS
        }
        .into(),
        counts,
        families_consistent,
        compatible_e_g,
        compatible_t_y,
        incompatibility_flag,
        intersection_nonempty: !intersection.is_empty(),
        condition_i_violated,
        witness_fraction: witnesses.len() as f64 / n as f64,
        expected_witness_fraction: expected,
        probability_sums,
        checks,
    };
    Ok((report, support))
}

/// Dumps of the minimal families of `h_T`, `h_Y`, `h_E`, `h_G` and of the
/// `T`/`Y` product family.
pub fn family_dumps(tol: f64) -> Result<BTreeMap<String, FamilyDump>> {
    let hs = IdealHistories::new(tol)?;
    let mut out = BTreeMap::new();
    let mut joint_parts = Vec::new();
    for (name, h) in [
        ("C(h_T)", &hs.h_t),
        ("C(h_Y)", &hs.h_y),
        ("C(h_E)", &hs.h_e),
        ("C(h_G)", &hs.h_g),
    ] {
        let fam = minimal_family(h, tol)?;
        out.insert(name.to_string(), fam.dump(&hs.rho, tol)?);
        joint_parts.push(fam);
    }
    if let Some(joint) = product_family(&joint_parts[0], &joint_parts[1], tol)? {
        out.insert("C(h_T)xC(h_Y)".to_string(), joint.dump(&hs.rho, tol)?);
    }
    Ok(out)
}
