//! Values frozen from an independent nalgebra construction of the two
//! setups, checked against the library's own operators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use realitylab::experiments::{
    build_ideal, build_singlet, direction_xz, singlet_correlation, DIM_I, DIM_II,
};
use realitylab::linalg::{commutator_norm, CMatrix, DEFAULT_TOL};

type M = DMatrix<Complex64>;

fn to_na(m: &CMatrix) -> M {
    M::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c))
}

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

fn diag(entries: &[f64]) -> M {
    M::from_diagonal(&DVector::from_iterator(
        entries.len(),
        entries.iter().map(|&x| real(x)),
    ))
}

fn kron(a: &M, b: &M) -> M {
    a.kronecker(b)
}

/// Oracle copy of the ideal-experiment operators, from the amplitudes and
/// spin bases directly.
struct Oracle {
    psi: DVector<Complex64>,
    e: M,
    g: M,
    t: M,
    y: M,
}

fn oracle() -> Oracle {
    // index = 4·(5/2 − m_I) + (3/2 − m_II)
    let mut psi = DVector::from_element(24, real(0.0));
    let r3_4 = 3f64.sqrt() / 4.0;
    psi[1] = real(r3_4); // |5/2⟩|1/2⟩
    psi[5] = real(r3_4); // |3/2⟩|1/2⟩
    psi[8] = real(1.0 / 8f64.sqrt()); // |1/2⟩|3/2⟩
    psi[15] = real(0.25); // |−1/2⟩|−3/2⟩
    psi[19] = real(0.25); // |−3/2⟩|−3/2⟩
    psi[22] = real((3.0f64 / 8.0).sqrt()); // |−5/2⟩|−1/2⟩

    let id_i = M::identity(DIM_I, DIM_I);
    let id_ii = M::identity(DIM_II, DIM_II);
    let e_loc = diag(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    let mut v11 = DVector::from_element(6, real(0.0));
    v11[0] = real(0.5);
    v11[1] = real(-0.5);
    v11[3] = real(0.5);
    v11[4] = real(-0.5);
    let g_loc = &v11 * v11.adjoint() + diag(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    Oracle {
        psi,
        e: kron(&e_loc, &id_ii),
        g: kron(&g_loc, &id_ii),
        t: kron(&id_i, &diag(&[1.0, 1.0, 0.0, 0.0])),
        y: kron(&id_i, &diag(&[1.0, 0.0, 1.0, 0.0])),
    }
}

fn hermitian_eigenvalues(m: &M) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

fn expectation(psi: &DVector<Complex64>, m: &M) -> f64 {
    (psi.adjoint() * m * psi)[(0, 0)].re
}

#[test]
fn library_operators_match_oracle() {
    let o = oracle();
    let s = build_ideal(DEFAULT_TOL).unwrap();
    let psi_lib = DVector::from_iterator(24, s.state.vec().entries().iter().copied());
    assert!((&psi_lib - &o.psi).norm() < 1e-15);
    for (lib, ora) in [(&s.e, &o.e), (&s.g, &o.g), (&s.t, &o.t), (&s.y, &o.y)] {
        assert!((to_na(lib.op()) - ora).norm() < 1e-15, "{}", lib.label());
    }
}

#[test]
fn oracle_spectra_are_projective() {
    let o = oracle();
    for (name, m, rank) in [
        ("E", &o.e, 12),
        ("G", &o.g, 12),
        ("T", &o.t, 12),
        ("Y", &o.y, 12),
    ] {
        let ev = hermitian_eigenvalues(m);
        assert!(
            ev.iter()
                .all(|x| x.abs() < 1e-12 || (x - 1.0).abs() < 1e-12),
            "{name}: {ev:?}"
        );
        assert_eq!(ev.iter().filter(|x| **x > 0.5).count(), rank, "{name}");
    }
    let s = build_ideal(DEFAULT_TOL).unwrap();
    for m in s.a_i.iter().chain(&s.a_ii).chain(&s.b_i) {
        let ev = hermitian_eigenvalues(&to_na(m));
        assert!(ev
            .iter()
            .all(|x| x.abs() < 1e-12 || (x - 1.0).abs() < 1e-12));
        assert_eq!(ev.iter().filter(|x| **x > 0.5).count(), 1);
    }
}

#[test]
fn oracle_commutators() {
    let o = oracle();
    let eg = (&o.e * &o.g - &o.g * &o.e).norm();
    let ty = (&o.t * &o.y - &o.y * &o.t).norm();
    // [E, G] restricted to particle I has Frobenius norm 1/√2, times √4 from 1_II
    assert!((eg - 2f64.sqrt()).abs() < 1e-12, "{eg}");
    assert!(ty < 1e-15);
    let s = build_ideal(DEFAULT_TOL).unwrap();
    assert!((commutator_norm(s.e.op(), s.g.op()).unwrap() - eg).abs() < 1e-12);
}

#[test]
fn oracle_perfect_correlations() {
    let o = oracle();
    assert!((&o.e * &o.psi - &o.t * &o.psi).norm() < 1e-15);
    assert!((&o.g * &o.psi - &o.y * &o.psi).norm() < 1e-15);
    assert!((o.psi.norm_squared() - 1.0).abs() < 1e-15);
}

#[test]
fn oracle_joint_born_values() {
    let o = oracle();
    let id = M::identity(24, 24);
    let not = |m: &M| &id - m;
    let frozen = [
        (&o.t * &o.y, 0.125),
        (&o.t * not(&o.y), 0.375),
        (not(&o.t) * &o.y, 0.375),
        (not(&o.t) * not(&o.y), 0.125),
    ];
    for (m, p) in frozen {
        assert!((expectation(&o.psi, &m) - p).abs() < 1e-15);
    }
    // T·Y = 1 ⊗ A_II^1
    let a1 = kron(&M::identity(DIM_I, DIM_I), &diag(&[1.0, 0.0, 0.0, 0.0]));
    assert!((&o.t * &o.y - &a1).norm() < 1e-15);
    assert!((expectation(&o.psi, &a1) - 0.125).abs() < 1e-15);
}

#[test]
fn singlet_correlation_is_minus_cosine() {
    let up = DVector::from_vec(vec![real(1.0), real(0.0)]);
    let down = DVector::from_vec(vec![real(0.0), real(1.0)]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi = (up.kronecker(&down) - down.kronecker(&up)) * real(s);
    for i in 0..12 {
        let theta = i as f64 * 0.5;
        let sz = diag(&[1.0, -1.0]);
        let sx = M::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(0.0)]);
        let sb = &sz * real(theta.cos()) + &sx * real(theta.sin());
        let oracle = expectation(&psi, &kron(&sz, &sb));
        assert!((oracle + theta.cos()).abs() < 1e-14);
        let lib = singlet_correlation(direction_xz(0.0), direction_xz(theta)).unwrap();
        assert!((lib - oracle).abs() < 1e-14);
    }
}

#[test]
fn singlet_spin_operators_match_oracle() {
    let setup = build_singlet(
        direction_xz(0.0),
        direction_xz(std::f64::consts::FRAC_PI_2),
        DEFAULT_TOL,
    )
    .unwrap();
    let sz = diag(&[1.0, -1.0]);
    let sx = M::from_row_slice(2, 2, &[real(0.0), real(1.0), real(1.0), real(0.0)]);
    let id = M::identity(2, 2);
    assert!((to_na(setup.a.op()) - kron(&sz, &id)).norm() < 1e-15);
    assert!((to_na(setup.b.op()) - kron(&sx, &id)).norm() < 1e-15);
    assert!((to_na(setup.p.op()) - kron(&id, &sz)).norm() < 1e-15);
    assert!((to_na(setup.q.op()) - kron(&id, &sx)).norm() < 1e-15);
}
