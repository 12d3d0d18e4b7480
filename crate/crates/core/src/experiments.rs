//! The two scenarios: a spin-1/2 singlet pair measured along two axes, and
//! a spin-5/2 ⊗ spin-3/2 pair whose particle-II measurements reveal two
//! incompatible particle-I properties.
//!
//! Basis conventions: ℋ_I is ordered `|5/2⟩ … |−5/2⟩` (indices 0–5), ℋ_II
//! `|3/2⟩ … |−3/2⟩` (0–3), and product index is `4·i + j`. The singlet lives
//! in `ℂ² ⊗ ℂ²` with `|↑⟩ = index 0`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{epr_intersection, EnsembleError, MeasurementPolicy, Support};
use crate::linalg::{commutator_norm, is_projector, CMatrix, CVector, LinalgError, C_I};
use crate::quantum::{
    conditional_probability, negate, CorrelationRule, Direction, Observable, Outcome, QuantumError,
    Sign, Site, SpectrumKind, StateVector,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("direction {0:?} is not a unit vector")]
    NotUnit([f64; 3]),
    #[error("measurement directions are parallel")]
    ParallelDirections,
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("construction invariant failed: {0}")]
    Invariant(String),
    #[error("no outcome of '{target}' is certain given {source_label} = {value}")]
    NoImpliedValue {
        target: String,
        source_label: String,
        value: Outcome,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Which correlation-extension rule to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    Strict,
    Wide,
}

impl Extension {
    pub fn as_str(self) -> &'static str {
        match self {
            Extension::Strict => "strict",
            Extension::Wide => "wide",
        }
    }
}

impl Support {
    pub fn apply_extension(
        &mut self,
        rule: &CorrelationRule,
        ext: Extension,
    ) -> std::result::Result<crate::ensemble::ExtensionOutcome, EnsembleError> {
        match ext {
            Extension::Strict => self.apply_strict_extension(rule),
            Extension::Wide => self.apply_wide_extension(rule),
        }
    }
}

/// `n·σ` for a unit vector `n`.
pub fn spin_component(n: [f64; 3]) -> CMatrix {
    let [x, y, z] = n;
    let c = |re: f64| Complex64::new(re, 0.0);
    CMatrix::new(2, 2, vec![c(z), c(x) - C_I * y, c(x) + C_I * y, c(-z)]).expect("2x2")
}

/// Unit vector in the x–z plane at polar angle `theta` from z.
pub fn direction_xz(theta: f64) -> [f64; 3] {
    [theta.sin(), 0.0, theta.cos()]
}

#[derive(Clone, Debug)]
pub struct BohmEprSetup {
    pub state: StateVector,
    pub n_a: [f64; 3],
    pub n_b: [f64; 3],
    pub a: Observable,
    pub b: Observable,
    pub p: Observable,
    pub q: Observable,
    /// `A ↔ −P`
    pub rule_ap: CorrelationRule,
    /// `B ↔ −Q`
    pub rule_bq: CorrelationRule,
}

impl BohmEprSetup {
    pub fn observable(&self, label: &str) -> Option<&Observable> {
        [&self.a, &self.b, &self.p, &self.q]
            .into_iter()
            .find(|o| o.label() == label)
    }
}

pub fn singlet_state(tol: f64) -> Result<StateVector> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let up = CVector::basis(2, 0);
    let down = CVector::basis(2, 1);
    let v = &up.tensor(&down).scale(Complex64::new(s, 0.0))
        - &down.tensor(&up).scale(Complex64::new(s, 0.0));
    Ok(StateVector::new(v, "singlet", tol)?)
}

pub fn build_singlet(n_a: [f64; 3], n_b: [f64; 3], tol: f64) -> Result<BohmEprSetup> {
    for n in [n_a, n_b] {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (len - 1.0).abs() > 1e-9 {
            return Err(ExperimentError::NotUnit(n));
        }
    }
    let cross = [
        n_a[1] * n_b[2] - n_a[2] * n_b[1],
        n_a[2] * n_b[0] - n_a[0] * n_b[2],
        n_a[0] * n_b[1] - n_a[1] * n_b[0],
    ];
    if cross.iter().map(|c| c * c).sum::<f64>().sqrt() <= 1e-9 {
        return Err(ExperimentError::ParallelDirections);
    }
    let state = singlet_state(tol)?;
    let r1 = Site::new("R_1");
    let r2 = Site::new("R_2");
    let (sa, sb) = (spin_component(n_a), spin_component(n_b));
    let dims = [2, 2];
    let a = Observable::local(&dims, 0, &sa, SpectrumKind::TwoValue, r1.clone(), "A", tol)?;
    let b = Observable::local(&dims, 0, &sb, SpectrumKind::TwoValue, r1, "B", tol)?;
    let p = Observable::local(&dims, 1, &sa, SpectrumKind::TwoValue, r2.clone(), "P", tol)?;
    let q = Observable::local(&dims, 1, &sb, SpectrumKind::TwoValue, r2, "Q", tol)?;
    if a.commutes_with(&b, tol)? || p.commutes_with(&q, tol)? {
        return Err(ExperimentError::Invariant(
            "same-particle spin components commute".into(),
        ));
    }
    let rule_ap = CorrelationRule::certify(
        a.clone(),
        p.clone(),
        state.clone(),
        Direction::Iff,
        Sign::Minus,
        tol,
    )?;
    let rule_bq = CorrelationRule::certify(
        b.clone(),
        q.clone(),
        state.clone(),
        Direction::Iff,
        Sign::Minus,
        tol,
    )?;
    // A, B must also commute with both of P, Q
    for x in [&a, &b] {
        for y in [&p, &q] {
            if !x.commutes_with(y, tol)? {
                return Err(ExperimentError::Invariant(format!(
                    "{} and {} do not commute",
                    x.label(),
                    y.label()
                )));
            }
        }
    }
    Ok(BohmEprSetup {
        state,
        n_a,
        n_b,
        a,
        b,
        p,
        q,
        rule_ap,
        rule_bq,
    })
}

pub const DIM_I: usize = 6;
pub const DIM_II: usize = 4;

#[derive(Clone, Debug)]
pub struct IdealSetup {
    pub state: StateVector,
    /// `A_I^1 … A_I^6`: z-spin `5/2 … −5/2` of particle I (6×6).
    pub a_i: Vec<CMatrix>,
    /// `A_II^1 … A_II^4`: z-spin `3/2 … −3/2` of particle II (4×4).
    pub a_ii: Vec<CMatrix>,
    /// `B_I^1 … B_I^3` (6×6).
    pub b_i: Vec<CMatrix>,
    pub e: Observable,
    pub g: Observable,
    pub t: Observable,
    pub y: Observable,
    /// `E ↔ T`
    pub rule_et: CorrelationRule,
    /// `G ↔ Y`
    pub rule_gy: CorrelationRule,
}

fn ket(dim: usize, index: usize) -> CVector {
    CVector::basis(dim, index)
}

fn combo(terms: &[(f64, CVector)]) -> CVector {
    let mut acc = CVector::zeros(terms[0].1.dim());
    for (c, v) in terms {
        acc = &acc + &v.scale(Complex64::new(*c, 0.0));
    }
    acc
}

fn sum(ms: &[&CMatrix]) -> CMatrix {
    ms[1..].iter().fold(ms[0].clone(), |acc, m| &acc + *m)
}

/// The entangled spin-5/2 ⊗ spin-3/2 state.
pub fn ideal_state(tol: f64) -> Result<StateVector> {
    let (i52, i32_, i12, im12, im32, im52) = (
        ket(6, 0),
        ket(6, 1),
        ket(6, 2),
        ket(6, 3),
        ket(6, 4),
        ket(6, 5),
    );
    let (ii32, ii12, iim12, iim32) = (ket(4, 0), ket(4, 1), ket(4, 2), ket(4, 3));
    let r3_4 = 3f64.sqrt() / 4.0;
    let v = combo(&[
        (r3_4, i52.tensor(&ii12)),
        (r3_4, i32_.tensor(&ii12)),
        (1.0 / 8f64.sqrt(), i12.tensor(&ii32)),
        (0.25, im12.tensor(&iim32)),
        (0.25, im32.tensor(&iim32)),
        ((3.0f64 / 8.0).sqrt(), im52.tensor(&iim12)),
    ]);
    Ok(StateVector::new(v, "ideal", tol)?)
}

pub fn build_ideal(tol: f64) -> Result<IdealSetup> {
    let state = ideal_state(tol)?;
    let a_i: Vec<CMatrix> = (0..DIM_I)
        .map(|k| ket(DIM_I, k).outer(&ket(DIM_I, k)))
        .collect();
    let a_ii: Vec<CMatrix> = (0..DIM_II)
        .map(|k| ket(DIM_II, k).outer(&ket(DIM_II, k)))
        .collect();
    let psi11 = combo(&[
        (0.5, ket(6, 0)),
        (-0.5, ket(6, 1)),
        (0.5, ket(6, 3)),
        (-0.5, ket(6, 4)),
    ]);
    let psi12 = ket(6, 2);
    let psi13 = ket(6, 5);
    let b_i: Vec<CMatrix> = [psi11, psi12, psi13].iter().map(|v| v.outer(v)).collect();

    let dims = [DIM_I, DIM_II];
    let (r_i, r_ii) = (Site::new("R_I"), Site::new("R_II"));
    let e_local = sum(&[&a_i[0], &a_i[1], &a_i[2]]);
    let g_local = sum(&[&b_i[0], &b_i[1], &b_i[2]]);
    let t_local = sum(&[&a_ii[0], &a_ii[1]]);
    let y_local = sum(&[&a_ii[0], &a_ii[2]]);
    let e = Observable::local(
        &dims,
        0,
        &e_local,
        SpectrumKind::ZeroOne,
        r_i.clone(),
        "E",
        tol,
    )?;
    let g = Observable::local(&dims, 0, &g_local, SpectrumKind::ZeroOne, r_i, "G", tol)?;
    let t = Observable::local(
        &dims,
        1,
        &t_local,
        SpectrumKind::ZeroOne,
        r_ii.clone(),
        "T",
        tol,
    )?;
    let y = Observable::local(&dims, 1, &y_local, SpectrumKind::ZeroOne, r_ii, "Y", tol)?;

    for m in a_i.iter().chain(&a_ii).chain(&b_i) {
        if !is_projector(m, tol)? {
            return Err(ExperimentError::Invariant("component projector".into()));
        }
    }
    if commutator_norm(t.op(), y.op())? > tol {
        return Err(ExperimentError::Invariant("[T,Y] != 0".into()));
    }
    if commutator_norm(e.op(), g.op())? <= tol {
        return Err(ExperimentError::Invariant("[E,G] = 0".into()));
    }
    let rule_et = CorrelationRule::certify(
        e.clone(),
        t.clone(),
        state.clone(),
        Direction::Iff,
        Sign::Plus,
        tol,
    )?;
    let rule_gy = CorrelationRule::certify(
        g.clone(),
        y.clone(),
        state.clone(),
        Direction::Iff,
        Sign::Plus,
        tol,
    )?;
    Ok(IdealSetup {
        state,
        a_i,
        a_ii,
        b_i,
        e,
        g,
        t,
        y,
        rule_et,
        rule_gy,
    })
}

impl IdealSetup {
    /// `1_I ⊗ A_II^k`, `k` counted from 1.
    pub fn a_ii_global(&self, k: usize) -> CMatrix {
        CMatrix::identity(DIM_I).tensor(&self.a_ii[k - 1])
    }

    pub fn observable(&self, label: &str) -> Option<&Observable> {
        [&self.e, &self.g, &self.t, &self.y]
            .into_iter()
            .find(|o| o.label() == label)
    }
}

/// The value of the other side of `rule` that quantum mechanics makes
/// certain once `source` shows `value`: the outcome `o` with
/// `p(target = o | source = value) = 1`.
pub fn implied_value(
    rule: &CorrelationRule,
    source: &Observable,
    value: Outcome,
    tol: f64,
) -> Result<Outcome> {
    let target = if source.label() == rule.a().label() {
        rule.b()
    } else {
        rule.a()
    };
    let psi = rule.state();
    let given = source.projector(value)?;
    let denom = psi.expectation(&given)?.re;
    if denom <= crate::quantum::MIN_CONDITIONING_PROBABILITY {
        return Err(ExperimentError::NoImpliedValue {
            target: target.label().into(),
            source_label: source.label().into(),
            value,
        });
    }
    for o in target.kind().outcomes() {
        let joint = psi.expectation(&(&target.projector(o)? * &given))?.re;
        if (joint / denom - 1.0).abs() <= tol.max(1e-9) {
            debug_assert_eq!(
                o,
                rule.partner_value(value),
                "certified rule disagrees with conditional probabilities"
            );
            return Ok(o);
        }
    }
    Err(ExperimentError::NoImpliedValue {
        target: target.label().into(),
        source_label: source.label().into(),
        value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRow {
    pub t: Outcome,
    pub y: Outcome,
    pub e: Outcome,
    pub g: Outcome,
}

/// Objective `(E, G)` values inferred from each `(T, Y)` outcome pair.
pub fn inference_table(setup: &IdealSetup, tol: f64) -> Result<Vec<InferenceRow>> {
    let mut rows = Vec::with_capacity(4);
    for (t, y) in [(1, 1), (1, 0), (0, 1), (0, 0)] {
        let e = implied_value(&setup.rule_et, &setup.t, t, tol)?;
        let g = implied_value(&setup.rule_gy, &setup.y, y, tol)?;
        rows.push(InferenceRow { t, y, e, g });
    }
    Ok(rows)
}

/// Pass/fail record for one algebraic identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">"`.
    pub relation: &'static str,
    pub threshold: f64,
    pub pass: bool,
}

impl Certificate {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Certificate {
            name: name.into(),
            value,
            relation: "<=",
            threshold,
            pass: value <= threshold,
        }
    }

    fn above(name: &str, value: f64, threshold: f64) -> Self {
        Certificate {
            name: name.into(),
            value,
            relation: ">",
            threshold,
            pass: value > threshold,
        }
    }
}

/// Every operator identity the two scenarios rest on, evaluated at `tol`.
///
/// Setup construction is done at the default tolerance so that a tiny `tol`
/// shows up as failing certificates rather than a construction error.
pub fn certificates(tol: f64) -> Result<Vec<Certificate>> {
    let build_tol = crate::linalg::DEFAULT_TOL.max(tol);
    let ideal = build_ideal(build_tol)?;
    let psi = &ideal.state;
    let mut out = vec![Certificate::at_most(
        "ideal_state_normalized",
        (psi.vec().norm_sqr() - 1.0).abs(),
        tol,
    )];

    let apply = |o: &Observable| o.op().apply(psi.vec());
    out.push(Certificate::at_most(
        "E_psi_equals_T_psi",
        apply(&ideal.e)?.distance(&apply(&ideal.t)?)?,
        tol,
    ));
    out.push(Certificate::at_most(
        "G_psi_equals_Y_psi",
        apply(&ideal.g)?.distance(&apply(&ideal.y)?)?,
        tol,
    ));
    for (x, y) in [
        (&ideal.e, &ideal.t),
        (&ideal.t, &ideal.e),
        (&ideal.g, &ideal.y),
        (&ideal.y, &ideal.g),
    ] {
        let p = conditional_probability(x, y, psi, build_tol)?;
        out.push(Certificate::at_most(
            &format!("p({}|{})_equals_1", x.label(), y.label()),
            (p - 1.0).abs(),
            tol,
        ));
    }
    out.push(Certificate::at_most(
        "commutator_T_Y_vanishes",
        commutator_norm(ideal.t.op(), ideal.y.op())?,
        tol,
    ));
    out.push(Certificate::above(
        "commutator_E_G_nonzero",
        commutator_norm(ideal.e.op(), ideal.g.op())?,
        0.1,
    ));

    let projector_defect = |m: &CMatrix| -> Result<f64> {
        let sq = m.matmul(m)?;
        Ok(sq.distance(m)?.max(m.distance(&m.adjoint())?))
    };
    for o in [&ideal.e, &ideal.g, &ideal.t, &ideal.y] {
        out.push(Certificate::at_most(
            &format!("{}_is_projector", o.label()),
            projector_defect(o.op())?,
            tol,
        ));
    }
    let families: [(&str, &Vec<CMatrix>); 3] = [
        ("A_I", &ideal.a_i),
        ("A_II", &ideal.a_ii),
        ("B_I", &ideal.b_i),
    ];
    for (name, ms) in families {
        for (k, m) in ms.iter().enumerate() {
            out.push(Certificate::at_most(
                &format!("{name}^{}_is_projector", k + 1),
                projector_defect(m)?,
                tol,
            ));
        }
    }

    let epr = build_singlet(
        direction_xz(0.0),
        direction_xz(std::f64::consts::FRAC_PI_2),
        build_tol,
    )?;
    let s = &epr.state;
    out.push(Certificate::at_most(
        "singlet_normalized",
        (s.vec().norm_sqr() - 1.0).abs(),
        tol,
    ));
    for (x, y) in [(&epr.a, &epr.p), (&epr.b, &epr.q)] {
        let ny = negate(y)?;
        let defect = crate::quantum::implication_defect(x, &ny, s, build_tol)?
            .max(crate::quantum::implication_defect(&ny, x, s, build_tol)?);
        out.push(Certificate::at_most(
            &format!("singlet_{}_anticorrelated_{}", x.label(), y.label()),
            defect,
            tol,
        ));
    }
    out.push(Certificate::above(
        "commutator_A_B_nonzero",
        commutator_norm(epr.a.op(), epr.b.op())?,
        0.1,
    ));
    Ok(out)
}

/// Groups a policy may use in the EPR analysis.
pub const EPR_GROUPS: [&[&str]; 8] = [
    &["A", "P"],
    &["B", "Q"],
    &["A", "Q"],
    &["P", "B"],
    &["A"],
    &["B"],
    &["P"],
    &["Q"],
];

pub const DEFAULT_EPR_POLICY: &str = "A,Q:0.5;P,B:0.5";

fn validate_epr_policy(policy: &MeasurementPolicy) -> Result<()> {
    for (labels, _) in &policy.groups {
        let mut sorted: Vec<&str> = labels.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        let ok = EPR_GROUPS.iter().any(|g| {
            let mut allowed = g.to_vec();
            allowed.sort_unstable();
            allowed == sorted
        });
        if !ok {
            return Err(ExperimentError::InvalidPolicy(format!(
                "group {{{}}} is not allowed",
                labels.join(",")
            )));
        }
    }
    Ok(())
}

pub const VERDICT_PQ_NONE: &str = "simultaneous_PQ_reality: none";
pub const VERDICT_PQ_ALL: &str = "simultaneous_PQ_reality: all";
pub const VERDICT_PQ_PARTIAL: &str = "simultaneous_PQ_reality: partial";
pub const VERDICT_EG_ALL: &str = "simultaneous_EG_reality: all";
pub const VERDICT_EG_NONE: &str = "simultaneous_EG_reality: none";
pub const VERDICT_EG_PARTIAL: &str = "simultaneous_EG_reality: partial";

fn verdict(
    size: usize,
    n: usize,
    none: &'static str,
    all: &'static str,
    partial: &'static str,
) -> &'static str {
    if size == 0 {
        none
    } else if size == n {
        all
    } else {
        partial
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

fn check(name: &str, pass: bool) -> Check {
    Check {
        name: name.into(),
        pass,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntersectionSizes {
    pub x_cap_y: usize,
    pub a_cap_q: usize,
    pub p_cap_b: usize,
    pub identity_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EprReport {
    pub experiment: &'static str,
    pub n: usize,
    pub seed: u64,
    pub extension: Extension,
    /// Fraction of the support in each measured set.
    pub frequencies: BTreeMap<String, f64>,
    pub simultaneous_set_size: usize,
    /// Every specimen holding both sides of a rule satisfies `a = −p`, `b = −q`.
    pub table_conformance: bool,
    pub verdict: String,
    pub counts: BTreeMap<String, usize>,
    pub intersection: IntersectionSizes,
    pub guard_refusals: usize,
    /// Same-axis jointly measured specimens with `a ≠ −p` (or `b ≠ −q`).
    pub anticorrelation_violations: usize,
    pub policy: String,
    pub theta_a: f64,
    pub theta_b: f64,
    pub checks: Vec<Check>,
}

impl EprReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EprConfig {
    pub n: usize,
    pub seed: u64,
    pub extension: Extension,
    pub policy: String,
    pub theta_a: f64,
    pub theta_b: f64,
    pub tol: f64,
}

impl Default for EprConfig {
    fn default() -> Self {
        EprConfig {
            n: 100_000,
            seed: 42,
            extension: Extension::Strict,
            policy: DEFAULT_EPR_POLICY.into(),
            theta_a: 0.0,
            theta_b: std::f64::consts::FRAC_PI_2,
            tol: crate::linalg::DEFAULT_TOL,
        }
    }
}

/// Runs the EPR analysis and returns the report together with the support.
pub fn run_epr(cfg: &EprConfig) -> Result<(EprReport, Support)> {
    let policy = MeasurementPolicy::parse(&cfg.policy)
        .map_err(|e| ExperimentError::InvalidPolicy(e.to_string()))?;
    validate_epr_policy(&policy)?;
    let setup = build_singlet(
        direction_xz(cfg.theta_a),
        direction_xz(cfg.theta_b),
        cfg.tol,
    )?;
    policy.check_commuting(|l| setup.observable(l), cfg.tol)?;

    let mut support = Support::new(setup.state.clone(), cfg.n, cfg.seed, cfg.tol)?;
    for o in [&setup.a, &setup.b, &setup.p, &setup.q] {
        support.register(o)?;
    }
    support.measure_policy(&policy, |l| setup.observable(l))?;
    let mut refusals = 0;
    for rule in [&setup.rule_ap, &setup.rule_bq] {
        refusals += support.apply_extension(rule, cfg.extension)?.refusals.len();
    }

    let labels = ["A", "B", "P", "Q"];
    let inter = epr_intersection(&support, labels)?;
    let simultaneous = support.simultaneous_reality_set("P", "Q");

    let mut counts = BTreeMap::new();
    for l in labels {
        counts.insert(l.to_string(), support.measured_set(l).len());
    }
    counts.insert("A&Q".into(), inter.a_cap_q.len());
    counts.insert("P&B".into(), inter.p_cap_b.len());
    counts.insert("simultaneous_PQ".into(), simultaneous.len());
    let n = cfg.n as f64;
    let frequencies = counts
        .iter()
        .map(|(k, v)| (k.clone(), *v as f64 / n))
        .collect();

    let mut violations = 0;
    let mut conformance = true;
    for spec in support.specimens() {
        for (x, y) in [("A", "P"), ("B", "Q")] {
            if let (Some(vx), Some(vy)) = (spec.measured.get(x), spec.measured.get(y)) {
                if *vx != -*vy {
                    violations += 1;
                }
            }
            if let (Some(vx), Some(vy)) = (spec.objective.get(x), spec.objective.get(y)) {
                if vx.value != -vy.value {
                    conformance = false;
                }
            }
        }
    }

    let expected_simultaneous = match cfg.extension {
        Extension::Strict => simultaneous.is_empty(),
        Extension::Wide => simultaneous.len() == cfg.n,
    };
    let checks = vec![
        check("intersection_identity", inter.identity_holds),
        check("correlation_conformance", conformance),
        check("same_axis_anticorrelation", violations == 0),
        check("simultaneous_set_as_expected", expected_simultaneous),
    ];
    let report = EprReport {
        experiment: "epr",
        n: cfg.n,
        seed: cfg.seed,
        extension: cfg.extension,
        frequencies,
        simultaneous_set_size: simultaneous.len(),
        table_conformance: conformance,
        verdict: verdict(
            simultaneous.len(),
            cfg.n,
            VERDICT_PQ_NONE,
            VERDICT_PQ_ALL,
            VERDICT_PQ_PARTIAL,
        )
        .into(),
        counts,
        intersection: IntersectionSizes {
            x_cap_y: inter.x_cap_y.len(),
            a_cap_q: inter.a_cap_q.len(),
            p_cap_b: inter.p_cap_b.len(),
            identity_holds: inter.identity_holds,
        },
        guard_refusals: refusals,
        anticorrelation_violations: violations,
        policy: cfg.policy.clone(),
        theta_a: cfg.theta_a,
        theta_b: cfg.theta_b,
        checks,
    };
    Ok((report, support))
}

pub fn run_epr_analysis(
    n: usize,
    seed: u64,
    extension: Extension,
    policy: &str,
) -> Result<EprReport> {
    let cfg = EprConfig {
        n,
        seed,
        extension,
        policy: policy.into(),
        ..EprConfig::default()
    };
    Ok(run_epr(&cfg)?.0)
}

/// Outcome pairs in table order.
pub const TY_PAIRS: [(Outcome, Outcome); 4] = [(1, 1), (1, 0), (0, 1), (0, 0)];

pub fn ty_key(t: Outcome, y: Outcome) -> String {
    format!("T={t},Y={y}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdealReport {
    pub experiment: &'static str,
    pub n: usize,
    pub seed: u64,
    pub extension: Extension,
    /// Empirical joint `(T, Y)` frequencies.
    pub frequencies: BTreeMap<String, f64>,
    pub simultaneous_set_size: usize,
    /// Inferred `(E, G)` match the inference table on every specimen.
    pub table_conformance: bool,
    pub verdict: String,
    pub counts: BTreeMap<String, usize>,
    /// Born values `⟨ψ|Π_T(t) Π_Y(y) ψ⟩`.
    pub born: BTreeMap<String, f64>,
    pub table: Vec<InferenceRow>,
    pub guard_refusals: usize,
    pub checks: Vec<Check>,
}

impl IdealReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Joint `(T, Y)` Born probabilities.
pub fn ideal_ty_born(setup: &IdealSetup) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (t, y) in TY_PAIRS {
        let joint = &setup.t.projector(t)? * &setup.y.projector(y)?;
        out.insert(ty_key(t, y), setup.state.expectation(&joint)?.re);
    }
    Ok(out)
}

/// `4·√(p(1−p)/n)`
pub fn four_sigma(p: f64, n: usize) -> f64 {
    4.0 * (p * (1.0 - p) / n as f64).sqrt()
}

pub fn run_ideal(
    n: usize,
    seed: u64,
    extension: Extension,
    tol: f64,
) -> Result<(IdealReport, Support)> {
    let setup = build_ideal(tol)?;
    let table = inference_table(&setup, tol)?;
    let mut support = Support::new(setup.state.clone(), n, seed, tol)?;
    let ids: Vec<usize> = (0..n).collect();
    support.measure(&ids, &[&setup.t, &setup.y])?;
    let mut refusals = 0;
    for rule in [&setup.rule_et, &setup.rule_gy] {
        refusals += support.apply_extension(rule, extension)?.refusals.len();
    }

    let mut counts: BTreeMap<String, usize> =
        TY_PAIRS.iter().map(|&(t, y)| (ty_key(t, y), 0)).collect();
    let mut conformance = true;
    for spec in support.specimens() {
        let (t, y) = (spec.measured["T"], spec.measured["Y"]);
        *counts.get_mut(&ty_key(t, y)).expect("outcome pair") += 1;
        let row = table
            .iter()
            .find(|r| r.t == t && r.y == y)
            .expect("table row");
        let e = spec.objective.get("E").map(|o| o.value);
        let g = spec.objective.get("G").map(|o| o.value);
        if e != Some(row.e) || g != Some(row.g) {
            conformance = false;
        }
    }
    let frequencies: BTreeMap<String, f64> = counts
        .iter()
        .map(|(k, v)| (k.clone(), *v as f64 / n as f64))
        .collect();
    let born = ideal_ty_born(&setup)?;
    let stats_ok = born
        .iter()
        .all(|(k, p)| (frequencies[k] - p).abs() <= four_sigma(*p, n));
    let simultaneous = support.simultaneous_reality_set("E", "G");

    let checks = vec![
        check("table_conformance", conformance),
        check("joint_frequencies_within_4_sigma", stats_ok),
        check("no_guard_refusals", refusals == 0),
        check("simultaneous_set_is_support", simultaneous.len() == n),
    ];
    let report = IdealReport {
        experiment: "ideal",
        n,
        seed,
        extension,
        frequencies,
        simultaneous_set_size: simultaneous.len(),
        table_conformance: conformance,
        verdict: verdict(
            simultaneous.len(),
            n,
            VERDICT_EG_NONE,
            VERDICT_EG_ALL,
            VERDICT_EG_PARTIAL,
        )
        .into(),
        counts,
        born,
        table,
        guard_refusals: refusals,
        checks,
    };
    Ok((report, support))
}

pub fn run_ideal_analysis(n: usize, seed: u64, extension: Extension) -> Result<IdealReport> {
    Ok(run_ideal(n, seed, extension, crate::linalg::DEFAULT_TOL)?.0)
}

/// Quantum prediction for the spin correlation `⟨(n_a·σ) ⊗ (n_b·σ)⟩` in the
/// singlet, evaluated densely.
pub fn singlet_correlation(n_a: [f64; 3], n_b: [f64; 3]) -> Result<f64> {
    let psi = singlet_state(crate::linalg::DEFAULT_TOL)?;
    let op = spin_component(n_a).tensor(&spin_component(n_b));
    Ok(psi.expectation(&op)?.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_TOL;
    use crate::quantum::quantum_implies;

    #[test]
    fn ideal_state_amplitudes() {
        let psi = ideal_state(DEFAULT_TOL).unwrap();
        let nonzero: Vec<(usize, f64)> = psi
            .vec()
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm() > 0.0)
            .map(|(i, z)| (i, z.re))
            .collect();
        let idx: Vec<usize> = nonzero.iter().map(|x| x.0).collect();
        // 4·i + j for (i, j) = (0,1), (1,1), (2,0), (3,3), (4,3), (5,2)
        assert_eq!(idx, vec![1, 5, 8, 15, 19, 22]);
        // 3/16 + 3/16 + 1/8 + 1/16 + 1/16 + 3/8
        let expected = [
            3.0 / 16.0,
            3.0 / 16.0,
            1.0 / 8.0,
            1.0 / 16.0,
            1.0 / 16.0,
            3.0 / 8.0,
        ];
        for ((_, amp), p) in nonzero.iter().zip(expected) {
            assert!((amp * amp - p).abs() < 1e-15);
        }
    }

    #[test]
    fn inference_table_rows() {
        let setup = build_ideal(DEFAULT_TOL).unwrap();
        let table = inference_table(&setup, DEFAULT_TOL).unwrap();
        let expected = [(1, 1, 1, 1), (1, 0, 1, 0), (0, 1, 0, 1), (0, 0, 0, 0)];
        for (row, (t, y, e, g)) in table.iter().zip(expected) {
            assert_eq!((row.t, row.y, row.e, row.g), (t, y, e, g));
        }
    }

    #[test]
    fn singlet_construction() {
        let setup = build_singlet(direction_xz(0.0), direction_xz(1.0), DEFAULT_TOL).unwrap();
        assert!((setup.state.vec().norm() - 1.0).abs() < 1e-15);
        let np = negate(&setup.p).unwrap();
        assert!(quantum_implies(&setup.a, &np, &setup.state, DEFAULT_TOL).unwrap());
        assert!(quantum_implies(&np, &setup.a, &setup.state, DEFAULT_TOL).unwrap());
        assert!(matches!(
            build_singlet(direction_xz(0.3), direction_xz(0.3), DEFAULT_TOL),
            Err(ExperimentError::ParallelDirections)
        ));
        assert!(matches!(
            build_singlet(
                direction_xz(0.0),
                direction_xz(std::f64::consts::PI),
                DEFAULT_TOL
            ),
            Err(ExperimentError::ParallelDirections)
        ));
        assert!(matches!(
            build_singlet([0.0, 0.0, 2.0], direction_xz(1.0), DEFAULT_TOL),
            Err(ExperimentError::NotUnit(_))
        ));
    }

    #[test]
    fn y_axis_directions_work() {
        let setup = build_singlet([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], DEFAULT_TOL).unwrap();
        assert!(negate(&setup.q).is_ok());
        // ⟨σ_n ⊗ σ_m⟩ = −n·m in the singlet
        let c = singlet_correlation(direction_xz(0.4), direction_xz(1.1)).unwrap();
        assert!((c + (0.7f64).cos()).abs() < 1e-14);
    }

    #[test]
    fn invalid_epr_policy() {
        for bad in ["A,B:1", "E:1", "A:0.7"] {
            assert!(
                run_epr_analysis(4, 1, Extension::Strict, bad).is_err(),
                "{bad}"
            );
        }
        assert!(run_epr_analysis(4, 1, Extension::Strict, "Q,B:1").is_ok());
    }

    #[test]
    fn minimal_epr_runs() {
        let r = run_epr_analysis(1, 0, Extension::Strict, "A:1").unwrap();
        assert_eq!(r.simultaneous_set_size, 0);
        assert_eq!(r.verdict, VERDICT_PQ_NONE);
        let r = run_ideal_analysis(1, 0, Extension::Strict).unwrap();
        assert_eq!(r.simultaneous_set_size, 1);
        assert!(r.table_conformance);
        assert_eq!(r.counts.values().sum::<usize>(), 1);
    }
}
