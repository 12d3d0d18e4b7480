//! States, site-tagged observables and the probability/correlation
//! predicates built on them.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, commutator_norm, is_projector, CMatrix, CVector, LinalgError, C_ONE};

/// Conditioning events with probability at or below this are treated as impossible.
pub const MIN_CONDITIONING_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("state '{label}' has norm {norm}, expected 1")]
    NotNormalized { label: String, norm: f64 },
    #[error("operator for '{0}' is not self-adjoint")]
    NotSelfAdjoint(String),
    #[error("operator for '{0}' is not a projector")]
    NotProjector(String),
    #[error("operator for '{0}' does not square to the identity")]
    NotInvolution(String),
    #[error("outcome {outcome} is not in the spectrum of '{label}'")]
    OutcomeNotInSpectrum { label: String, outcome: Outcome },
    #[error("'{0}' and '{1}' do not commute")]
    NonCommuting(String, String),
    #[error("conditioning event '{0}' has zero probability")]
    ZeroProbabilityCondition(String),
    #[error("cannot negate 0-1 observable '{0}'")]
    NegateZeroOne(String),
    #[error("'{0}' and '{1}' are tagged as separated but do not commute")]
    SeparatedNonCommuting(String, String),
    #[error("correlation {0} is not certified in state '{1}'")]
    NotCertified(String, String),
    #[error("correlation between '{0}' and '{1}' requires separated observables")]
    NotSeparated(String, String),
    #[error("anti-correlation is only defined for two-value observables ('{0}')")]
    SignedZeroOne(String),
}

pub type Result<T> = std::result::Result<T, QuantumError>;

/// Measurement outcome label: `1`/`-1` for two-value observables, `1`/`0`
/// for 0-1 observables.
pub type Outcome = i8;

/// A normalized pure state.
#[derive(Clone, Debug)]
pub struct StateVector {
    vec: CVector,
    label: String,
}

impl StateVector {
    pub fn new(vec: CVector, label: impl Into<String>, tol: f64) -> Result<Self> {
        let label = label.into();
        let norm = vec.norm();
        if (norm - 1.0).abs() > tol {
            return Err(QuantumError::NotNormalized { label, norm });
        }
        Ok(StateVector { vec, label })
    }

    pub fn vec(&self) -> &CVector {
        &self.vec
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.vec.dim()
    }

    /// `⟨ψ|m ψ⟩`.
    pub fn expectation(&self, m: &CMatrix) -> Result<Complex64> {
        Ok(self.vec.inner(&m.apply(&self.vec)?)?)
    }

    /// Same label and the same vector within `tol`.
    pub fn same_as(&self, other: &StateVector, tol: f64) -> bool {
        self.label == other.label && self.vec.distance(&other.vec).is_ok_and(|d| d <= tol)
    }
}

/// A spatial region tag. Observables on different sites are space-like separated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub String);

impl Site {
    pub fn new(name: impl Into<String>) -> Self {
        Site(name.into())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpectrumKind {
    /// Spectrum `{1, -1}`.
    TwoValue,
    /// Spectrum `{1, 0}`; the operator is a projector.
    ZeroOne,
}

impl SpectrumKind {
    pub fn positive(self) -> Outcome {
        1
    }

    pub fn negative(self) -> Outcome {
        match self {
            SpectrumKind::TwoValue => -1,
            SpectrumKind::ZeroOne => 0,
        }
    }

    pub fn outcomes(self) -> [Outcome; 2] {
        [self.positive(), self.negative()]
    }

    pub fn contains(self, outcome: Outcome) -> bool {
        outcome == self.positive() || outcome == self.negative()
    }

    /// The opposite outcome label.
    pub fn flip(self, outcome: Outcome) -> Outcome {
        if outcome == self.positive() {
            self.negative()
        } else {
            self.positive()
        }
    }
}

/// A sharp yes/no observable with a site tag.
#[derive(Clone, Debug)]
pub struct Observable {
    op: CMatrix,
    kind: SpectrumKind,
    site: Site,
    label: String,
}

impl Observable {
    /// Validates self-adjointness and the spectrum implied by `kind`.
    pub fn new(
        op: CMatrix,
        kind: SpectrumKind,
        site: Site,
        label: impl Into<String>,
        tol: f64,
    ) -> Result<Self> {
        let label = label.into();
        if !op.is_hermitian(tol)? {
            return Err(QuantumError::NotSelfAdjoint(label));
        }
        match kind {
            SpectrumKind::ZeroOne => {
                if !is_projector(&op, tol)? {
                    return Err(QuantumError::NotProjector(label));
                }
            }
            SpectrumKind::TwoValue => {
                if !op.matmul(&op)?.is_identity(tol) {
                    return Err(QuantumError::NotInvolution(label));
                }
            }
        }
        Ok(Observable {
            op,
            kind,
            site,
            label,
        })
    }

    /// An observable acting as `local` on factor `factor` of a product space
    /// with factor dimensions `dims`, and as the identity elsewhere.
    pub fn local(
        dims: &[usize],
        factor: usize,
        local: &CMatrix,
        kind: SpectrumKind,
        site: Site,
        label: impl Into<String>,
        tol: f64,
    ) -> Result<Self> {
        let op = linalg::embed(dims, factor, local)?;
        Self::new(op, kind, site, label, tol)
    }

    /// The sure event: identity as a 0-1 observable.
    pub fn identity(dim: usize, site: Site) -> Self {
        Observable {
            op: CMatrix::identity(dim),
            kind: SpectrumKind::ZeroOne,
            site,
            label: "1".into(),
        }
    }

    pub fn op(&self) -> &CMatrix {
        &self.op
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn site(&self) -> &Site {
        &self.site
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.op.rows()
    }

    /// Spectral projector for `outcome`.
    pub fn projector(&self, outcome: Outcome) -> Result<CMatrix> {
        let id = CMatrix::identity(self.dim());
        let half = Complex64::new(0.5, 0.0);
        match (self.kind, outcome) {
            (SpectrumKind::TwoValue, 1) => Ok((&id + &self.op).scale(half)),
            (SpectrumKind::TwoValue, -1) => Ok((&id - &self.op).scale(half)),
            (SpectrumKind::ZeroOne, 1) => Ok(self.op.clone()),
            (SpectrumKind::ZeroOne, 0) => Ok(&id - &self.op),
            _ => Err(QuantumError::OutcomeNotInSpectrum {
                label: self.label.clone(),
                outcome,
            }),
        }
    }

    pub fn commutes_with(&self, other: &Observable, tol: f64) -> Result<bool> {
        Ok(commutator_norm(&self.op, &other.op)? <= tol)
    }
}

/// `⟨ψ|Π_outcome ψ⟩`.
pub fn born_probability(a: &Observable, outcome: Outcome, psi: &StateVector) -> Result<f64> {
    let proj = a.projector(outcome)?;
    Ok(psi.expectation(&proj)?.re)
}

fn require_commuting(a: &Observable, b: &Observable, tol: f64) -> Result<()> {
    if a.commutes_with(b, tol)? {
        Ok(())
    } else {
        Err(QuantumError::NonCommuting(a.label.clone(), b.label.clone()))
    }
}

/// `p(a=1 | given=1) = ⟨ψ|Π_a Π_given ψ⟩ / ⟨ψ|Π_given ψ⟩`.
pub fn conditional_probability(
    a: &Observable,
    given: &Observable,
    psi: &StateVector,
    tol: f64,
) -> Result<f64> {
    require_commuting(a, given, tol)?;
    let pa = a.projector(1)?;
    let pg = given.projector(1)?;
    let denom = psi.expectation(&pg)?.re;
    if denom <= MIN_CONDITIONING_PROBABILITY {
        return Err(QuantumError::ZeroProbabilityCondition(given.label.clone()));
    }
    let num = psi.expectation(&(&pa * &pg))?.re;
    Ok(num / denom)
}

/// Probability that `a` yields 1 while `b` does not, for a commuting pair.
pub fn implication_defect(
    a: &Observable,
    b: &Observable,
    psi: &StateVector,
    tol: f64,
) -> Result<f64> {
    require_commuting(a, b, tol)?;
    let pa = a.projector(1)?;
    let not_b = b.projector(b.kind.negative())?;
    Ok(psi.expectation(&(&pa * &not_b))?.re)
}

/// Quantum implication `a → b` in `psi`: the joint event `a = 1, b ≠ 1` has
/// probability at most `tol`.
pub fn quantum_implies(
    a: &Observable,
    b: &Observable,
    psi: &StateVector,
    tol: f64,
) -> Result<bool> {
    Ok(implication_defect(a, b, psi, tol)? <= tol)
}

/// Perfect correlation `a ↔ b` in `psi`.
///
/// For 0-1 pairs this is the vector identity `aψ = bψ`; other pairs fall back
/// to implication in both directions. Non-commuting pairs are never
/// perfectly correlated.
pub fn perfectly_correlated(a: &Observable, b: &Observable, psi: &StateVector, tol: f64) -> bool {
    if !a.commutes_with(b, tol).unwrap_or(false) {
        return false;
    }
    match (a.kind, b.kind) {
        (SpectrumKind::ZeroOne, SpectrumKind::ZeroOne) => {
            let (Ok(av), Ok(bv)) = (a.op.apply(psi.vec()), b.op.apply(psi.vec())) else {
                return false;
            };
            let ok = av.distance(&bv).is_ok_and(|d| d <= tol);
            if ok {
                for (x, y) in [(a, b), (b, a)] {
                    if let Ok(p) = conditional_probability(x, y, psi, tol) {
                        debug_assert!(
                            (p - 1.0).abs() <= 10.0 * tol.max(f64::EPSILON),
                            "p({}|{}) = {p}",
                            x.label,
                            y.label
                        );
                    }
                }
            }
            ok
        }
        _ => {
            quantum_implies(a, b, psi, tol).unwrap_or(false)
                && quantum_implies(b, a, psi, tol).unwrap_or(false)
        }
    }
}

/// The observable `−a`, with outcome labels swapped. Only defined for two-value observables.
pub fn negate(a: &Observable) -> Result<Observable> {
    if a.kind != SpectrumKind::TwoValue {
        return Err(QuantumError::NegateZeroOne(a.label.clone()));
    }
    let label = match a.label.strip_prefix('-') {
        Some(rest) => rest.to_string(),
        None => format!("-{}", a.label),
    };
    Ok(Observable {
        op: a.op.scale(-C_ONE),
        kind: a.kind,
        site: a.site.clone(),
        label,
    })
}

/// Space-like separation: the observables sit on different sites. A separated
/// pair that fails to commute is a model-construction error.
pub fn are_separated(a: &Observable, b: &Observable, tol: f64) -> Result<bool> {
    if a.site == b.site {
        return Ok(false);
    }
    if !a.commutes_with(b, tol)? {
        return Err(QuantumError::SeparatedNonCommuting(
            a.label.clone(),
            b.label.clone(),
        ));
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `a → b`
    Implies,
    /// `a ↔ b`
    Iff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// A perfect correlation between two separated observables, certified in a
/// given state. `Minus` relates `a` to `−b`.
#[derive(Clone, Debug)]
pub struct CorrelationRule {
    a: Observable,
    b: Observable,
    state: StateVector,
    direction: Direction,
    sign: Sign,
}

impl CorrelationRule {
    pub fn certify(
        a: Observable,
        b: Observable,
        state: StateVector,
        direction: Direction,
        sign: Sign,
        tol: f64,
    ) -> Result<Self> {
        if !are_separated(&a, &b, tol)? {
            return Err(QuantumError::NotSeparated(a.label.clone(), b.label.clone()));
        }
        let target = match sign {
            Sign::Plus => b.clone(),
            Sign::Minus => {
                if a.kind != SpectrumKind::TwoValue {
                    return Err(QuantumError::SignedZeroOne(a.label.clone()));
                }
                negate(&b).map_err(|_| QuantumError::SignedZeroOne(b.label.clone()))?
            }
        };
        let forward = quantum_implies(&a, &target, &state, tol)?;
        let certified = match direction {
            Direction::Implies => forward,
            Direction::Iff => {
                forward
                    && quantum_implies(&target, &a, &state, tol)?
                    && match (a.kind, target.kind) {
                        (SpectrumKind::ZeroOne, SpectrumKind::ZeroOne) => {
                            perfectly_correlated(&a, &target, &state, tol)
                        }
                        _ => true,
                    }
            }
        };
        let rule = CorrelationRule {
            a,
            b,
            state,
            direction,
            sign,
        };
        if !certified {
            return Err(QuantumError::NotCertified(
                rule.describe(),
                rule.state.label.clone(),
            ));
        }
        Ok(rule)
    }

    pub fn a(&self) -> &Observable {
        &self.a
    }

    pub fn b(&self) -> &Observable {
        &self.b
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// The value of `b` implied by `a = value` (or of `a` implied by `b`,
    /// the relation being symmetric in the sign).
    pub fn partner_value(&self, value: Outcome) -> Outcome {
        match self.sign {
            Sign::Plus => value,
            Sign::Minus => -value,
        }
    }

    pub fn describe(&self) -> String {
        let arrow = match self.direction {
            Direction::Implies => "->",
            Direction::Iff => "<->",
        };
        let sign = match self.sign {
            Sign::Plus => "",
            Sign::Minus => "-",
        };
        format!("{} {arrow} {sign}{}", self.a.label, self.b.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DEFAULT_TOL;

    fn sz() -> CMatrix {
        CMatrix::from_real_diag(&[1.0, -1.0])
    }

    fn sx() -> CMatrix {
        CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn singlet() -> StateVector {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::new(
            CVector::from_real(&[0.0, s, -s, 0.0]).unwrap(),
            "singlet",
            DEFAULT_TOL,
        )
        .unwrap()
    }

    fn spin(factor: usize, m: &CMatrix, label: &str) -> Observable {
        let site = Site::new(if factor == 0 { "R_1" } else { "R_2" });
        Observable::local(
            &[2, 2],
            factor,
            m,
            SpectrumKind::TwoValue,
            site,
            label,
            DEFAULT_TOL,
        )
        .unwrap()
    }

    #[test]
    fn state_normalization_enforced() {
        let v = CVector::from_real(&[1.0, 1.0]).unwrap();
        assert!(matches!(
            StateVector::new(v, "bad", 1e-10),
            Err(QuantumError::NotNormalized { .. })
        ));
    }

    #[test]
    fn observable_validation() {
        let site = Site::new("R");
        assert!(Observable::new(sx(), SpectrumKind::ZeroOne, site.clone(), "x", 1e-10).is_err());
        assert!(Observable::new(sx(), SpectrumKind::TwoValue, site.clone(), "x", 1e-10).is_ok());
        let half = CMatrix::from_real_diag(&[0.5, 0.5]);
        assert!(Observable::new(half, SpectrumKind::TwoValue, site.clone(), "h", 1e-10).is_err());
        let non_herm = CMatrix::from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            Observable::new(non_herm, SpectrumKind::TwoValue, site, "n", 1e-10),
            Err(QuantumError::NotSelfAdjoint(_))
        ));
    }

    #[test]
    fn born_rule_and_spectrum() {
        let psi = singlet();
        let a = spin(0, &sz(), "A");
        assert!((born_probability(&a, 1, &psi).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            born_probability(&a, 0, &psi),
            Err(QuantumError::OutcomeNotInSpectrum { .. })
        ));
        let id = Observable::identity(4, Site::new("R_1"));
        assert!((born_probability(&id, 1, &psi).unwrap() - 1.0).abs() < 1e-15);
        assert!(born_probability(&id, 0, &psi).unwrap().abs() < 1e-15);
    }

    #[test]
    fn negation() {
        let psi = singlet();
        let p = spin(1, &sz(), "P");
        let np = negate(&p).unwrap();
        assert_eq!(np.label(), "-P");
        assert_eq!(np.site(), p.site());
        let nnp = negate(&np).unwrap();
        assert_eq!(nnp.label(), "P");
        assert_eq!(nnp.op(), p.op());
        let lhs = born_probability(&np, 1, &psi).unwrap();
        let rhs = born_probability(&p, -1, &psi).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
        let e = Observable::identity(4, Site::new("R"));
        assert!(matches!(negate(&e), Err(QuantumError::NegateZeroOne(_))));
    }

    #[test]
    fn singlet_anti_correlation() {
        let psi = singlet();
        let a = spin(0, &sz(), "A");
        let p = spin(1, &sz(), "P");
        let np = negate(&p).unwrap();
        assert!(quantum_implies(&a, &np, &psi, DEFAULT_TOL).unwrap());
        assert!(quantum_implies(&np, &a, &psi, DEFAULT_TOL).unwrap());
        assert!(!quantum_implies(&a, &p, &psi, DEFAULT_TOL).unwrap());
        assert!(perfectly_correlated(&a, &np, &psi, DEFAULT_TOL));
        let rule = CorrelationRule::certify(
            a.clone(),
            p.clone(),
            psi.clone(),
            Direction::Iff,
            Sign::Minus,
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(rule.partner_value(1), -1);
        assert!(
            CorrelationRule::certify(a, p, psi, Direction::Iff, Sign::Plus, DEFAULT_TOL).is_err()
        );
    }

    #[test]
    fn implication_needs_commuting_pair() {
        let psi = singlet();
        let a = spin(0, &sz(), "A");
        let b = spin(0, &sx(), "B");
        assert!(matches!(
            quantum_implies(&a, &b, &psi, 1e-10),
            Err(QuantumError::NonCommuting(..))
        ));
        assert!(!perfectly_correlated(&a, &b, &psi, 1e-10));
        assert!(quantum_implies(&a, &a, &psi, 1e-10).unwrap());
    }

    #[test]
    fn separation() {
        let a = spin(0, &sz(), "A");
        let b = spin(0, &sx(), "B");
        let q = spin(1, &sx(), "Q");
        assert!(!are_separated(&a, &b, 1e-10).unwrap());
        assert!(are_separated(&a, &q, 1e-10).unwrap());
        assert!(are_separated(&q, &a, 1e-10).unwrap());
        // mislabelled site: B claims to be elsewhere but acts on particle 1
        let fake = Observable::new(
            b.op().clone(),
            SpectrumKind::TwoValue,
            Site::new("R_2"),
            "B'",
            1e-10,
        )
        .unwrap();
        assert!(matches!(
            are_separated(&a, &fake, 1e-10),
            Err(QuantumError::SeparatedNonCommuting(..))
        ));
        let psi = singlet();
        assert!(matches!(
            CorrelationRule::certify(a, b, psi, Direction::Implies, Sign::Plus, 1e-10),
            Err(QuantumError::NotSeparated(..))
        ));
    }

    #[test]
    fn zero_probability_condition() {
        let up = StateVector::new(CVector::basis(2, 0), "up", 1e-10).unwrap();
        let site = Site::new("R");
        let p_up = Observable::new(
            CMatrix::from_real_diag(&[1.0, 0.0]),
            SpectrumKind::ZeroOne,
            site.clone(),
            "up",
            1e-10,
        )
        .unwrap();
        let p_down = Observable::new(
            CMatrix::from_real_diag(&[0.0, 1.0]),
            SpectrumKind::ZeroOne,
            site,
            "down",
            1e-10,
        )
        .unwrap();
        assert!(matches!(
            conditional_probability(&p_up, &p_down, &up, 1e-10),
            Err(QuantumError::ZeroProbabilityCondition(_))
        ));
        assert!((conditional_probability(&p_up, &p_up, &up, 1e-10).unwrap() - 1.0).abs() < 1e-15);
    }
}
