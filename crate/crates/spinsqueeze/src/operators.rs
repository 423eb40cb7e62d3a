//! Spin and ancilla operators, coherent states, rotations and partial traces.
//!
//! Conventions (fixed so coherent-state phases are reproducible):
//!
//! - single-spin basis ordered |down> = index 0, |up> = index 1, where
//!   |up>/|down> are the +1/-1 eigenstates of sigma_z;
//! - Dicke basis |j = N/2, m> ordered by increasing m (index k <-> m = k - j);
//! - total space = spin factor (x) ancilla factor;
//! - J_mu = (1/2) sum_i sigma_mu^(i), J_pm = J_x +- i J_y, which in the Dicke
//!   basis is the standard angular-momentum ladder;
//! - spin coherent state |theta,phi> = prod_i [cos(theta/2)|down_i> +
//!   e^{-i phi} sin(theta/2)|up_i>];
//! - rotations R(theta,phi) = exp[-i theta (J_x sin phi - J_y cos phi)], so
//!   |theta,phi> = R(theta,phi)|0,0>.

use ndarray::prelude::*;

use crate::linalg::{adjoint, expm_hermitian, hermitize, hermiticity_deviation, kron, min_eigval_hermitian};
use crate::space::{Ancilla, Representation, SpaceLayout};
use crate::{C64, Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Spin operator axis selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Axis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// Dense operator on a [`SpaceLayout`].
#[derive(Clone, Debug)]
pub struct Operator {
    matrix: Array2<C64>,
    layout: SpaceLayout,
}

impl Operator {
    pub fn new(matrix: Array2<C64>, layout: SpaceLayout) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument("operator matrix must be square".into()));
        }
        if matrix.nrows() != layout.total_dim() {
            return Err(Error::DimensionMismatch { expected: layout.total_dim(), got: matrix.nrows() });
        }
        Ok(Operator { matrix, layout })
    }

    pub fn identity(layout: SpaceLayout) -> Self {
        Operator { matrix: Array2::eye(layout.total_dim()), layout }
    }

    pub fn zeros(layout: SpaceLayout) -> Self {
        Operator { matrix: Array2::zeros((layout.total_dim(), layout.total_dim())), layout }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Operator {
        Operator { matrix: adjoint(&self.matrix), layout: self.layout }
    }

    pub fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.layout, other.layout, "operator layout mismatch");
        Operator { matrix: self.matrix.dot(&other.matrix), layout: self.layout }
    }

    pub fn scale(&self, c: C64) -> Operator {
        Operator { matrix: self.matrix.mapv(|x| x * c), layout: self.layout }
    }

    pub fn scale_re(&self, c: f64) -> Operator {
        self.scale(C64::new(c, 0.0))
    }

    /// Max entrywise |M - M^dagger|.
    pub fn hermiticity_deviation(&self) -> f64 {
        hermiticity_deviation(&self.matrix)
    }

    /// Verify Hermiticity to the stated tolerance (1e-12 by default contract).
    pub fn assert_hermitian(&self, tol: f64) -> Result<()> {
        let dev = self.hermiticity_deviation();
        if dev > tol {
            return Err(Error::NotHermitian { dev });
        }
        Ok(())
    }

    /// U = exp(-i t H) for Hermitian self; errors if self is not Hermitian.
    pub fn unitary_exp(&self, t: f64) -> Result<Operator> {
        self.assert_hermitian(1e-10 * (1.0 + self.max_abs()))?;
        let m = expm_hermitian(&hermitize(&self.matrix), C64::new(0.0, -t))?;
        Ok(Operator { matrix: m, layout: self.layout })
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diag().iter().sum()
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layout mismatch");
        Operator { matrix: &self.matrix + &rhs.matrix, layout: self.layout }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layout mismatch");
        Operator { matrix: &self.matrix - &rhs.matrix, layout: self.layout }
    }
}

/// Density matrix tagged with its layout.
#[derive(Clone, Debug)]
pub struct QuantumState {
    rho: Array2<C64>,
    layout: SpaceLayout,
}

/// Diagnostics from [`QuantumState::validate`].
#[derive(Clone, Copy, Debug)]
pub struct StateDiagnostics {
    pub trace_err: f64,
    pub hermiticity_dev: f64,
    pub min_eigenvalue: f64,
}

impl QuantumState {
    /// Build from a pure state vector (normalized internally).
    pub fn from_pure(psi: &Array1<C64>, layout: SpaceLayout) -> Result<Self> {
        if psi.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch { expected: layout.total_dim(), got: psi.len() });
        }
        let nrm = psi.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let v = psi.mapv(|x| x / nrm);
        let mut rho = Array2::<C64>::zeros((v.len(), v.len()));
        for i in 0..v.len() {
            for j in 0..v.len() {
                rho[(i, j)] = v[i] * v[j].conj();
            }
        }
        Ok(QuantumState { rho, layout })
    }

    /// Build from a density matrix, enforcing trace, Hermiticity and
    /// positivity within the standard tolerances.
    pub fn from_density(rho: Array2<C64>, layout: SpaceLayout) -> Result<Self> {
        if rho.nrows() != layout.total_dim() || rho.ncols() != layout.total_dim() {
            return Err(Error::DimensionMismatch { expected: layout.total_dim(), got: rho.nrows() });
        }
        let state = QuantumState { rho, layout };
        let d = state.validate()?;
        if d.trace_err > 1e-9 {
            return Err(Error::InvalidArgument(format!("trace deviates from 1 by {:.3e}", d.trace_err)));
        }
        if d.hermiticity_dev > 1e-10 {
            return Err(Error::NotHermitian { dev: d.hermiticity_dev });
        }
        if d.min_eigenvalue < -1e-8 {
            return Err(Error::PositivityViolation { min_eig: d.min_eigenvalue });
        }
        Ok(state)
    }

    /// Internal constructor for freshly integrated states (caller guarantees
    /// the invariants are monitored separately).
    pub(crate) fn from_density_unchecked(rho: Array2<C64>, layout: SpaceLayout) -> Self {
        QuantumState { rho, layout }
    }

    pub fn rho(&self) -> &Array2<C64> {
        &self.rho
    }

    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.rho.diag().iter().sum()
    }

    pub fn purity(&self) -> f64 {
        // tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.rho.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn expect(&self, op: &Operator) -> C64 {
        assert_eq!(self.layout, op.layout(), "state/operator layout mismatch");
        let mut acc = ZERO;
        // tr(rho A) = sum_ij rho_ij A_ji
        for i in 0..self.rho.nrows() {
            for j in 0..self.rho.ncols() {
                acc += self.rho[(i, j)] * op.matrix()[(j, i)];
            }
        }
        acc
    }

    pub fn validate(&self) -> Result<StateDiagnostics> {
        let trace_err = (self.trace() - ONE).norm();
        let herm = hermiticity_deviation(&self.rho);
        let min_eig = min_eigval_hermitian(&hermitize(&self.rho))?;
        Ok(StateDiagnostics { trace_err, hermiticity_dev: herm, min_eigenvalue: min_eig })
    }

    /// Conjugate by a unitary: U rho U^dagger.
    pub fn apply_unitary(&self, u: &Operator) -> QuantumState {
        assert_eq!(self.layout, u.layout(), "state/operator layout mismatch");
        let m = u.matrix().dot(&self.rho).dot(&adjoint(u.matrix()));
        QuantumState { rho: m, layout: self.layout }
    }

    /// Fidelity with a pure reference state: <psi| rho |psi>.
    pub fn fidelity_pure(&self, psi: &Array1<C64>) -> f64 {
        let tmp = self.rho.dot(psi);
        psi.iter().zip(tmp.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Population of the highest ancilla level (boson truncation guard).
    pub fn top_ancilla_population(&self) -> f64 {
        let da = self.layout.ancilla_dim();
        if da < 2 {
            return 0.0;
        }
        let ds = self.layout.spin_dim();
        let mut pop = 0.0;
        for is in 0..ds {
            pop += self.rho[(is * da + da - 1, is * da + da - 1)].re;
        }
        pop
    }
}

// ---------------------------------------------------------------------------
// single-spin / ancilla building blocks
// ---------------------------------------------------------------------------

pub(crate) fn sigma(axis: Axis) -> Array2<C64> {
    // basis ordering (|down>, |up>)
    match axis {
        Axis::X => array![[ZERO, ONE], [ONE, ZERO]],
        Axis::Y => array![[ZERO, C64::new(0.0, 1.0)], [C64::new(0.0, -1.0), ZERO]],
        Axis::Z => array![[-ONE, ZERO], [ZERO, ONE]],
        Axis::Plus => array![[ZERO, ZERO], [ONE, ZERO]],
        Axis::Minus => array![[ZERO, ONE], [ZERO, ZERO]],
    }
}

fn ancilla_lowering_matrix(d: usize) -> Array2<C64> {
    let mut a = Array2::<C64>::zeros((d, d));
    for n in 0..d - 1 {
        a[(n, n + 1)] = C64::new(((n + 1) as f64).sqrt(), 0.0);
    }
    a
}

/// Lift a spin-factor matrix to the total space (identity on ancilla).
pub(crate) fn lift_spin(m: &Array2<C64>, layout: SpaceLayout) -> Array2<C64> {
    match layout.ancilla {
        Ancilla::None => m.clone(),
        _ => kron(m, &Array2::eye(layout.ancilla_dim())),
    }
}

/// Lift an ancilla-factor matrix to the total space (identity on spins).
pub(crate) fn lift_ancilla(m: &Array2<C64>, layout: SpaceLayout) -> Array2<C64> {
    kron(&Array2::eye(layout.spin_dim()), m)
}

fn dicke_collective(n: usize, axis: Axis) -> Array2<C64> {
    let j = n as f64 / 2.0;
    let dim = n + 1;
    match axis {
        Axis::Z => {
            let mut m = Array2::<C64>::zeros((dim, dim));
            for k in 0..dim {
                m[(k, k)] = C64::new(k as f64 - j, 0.0);
            }
            m
        }
        Axis::Plus => {
            let mut m = Array2::<C64>::zeros((dim, dim));
            for k in 0..dim - 1 {
                let mm = k as f64 - j;
                m[(k + 1, k)] = C64::new((j * (j + 1.0) - mm * (mm + 1.0)).sqrt(), 0.0);
            }
            m
        }
        Axis::Minus => adjoint(&dicke_collective(n, Axis::Plus)),
        Axis::X => {
            let p = dicke_collective(n, Axis::Plus);
            let m = dicke_collective(n, Axis::Minus);
            (&p + &m).mapv(|x| x * 0.5)
        }
        Axis::Y => {
            let p = dicke_collective(n, Axis::Plus);
            let m = dicke_collective(n, Axis::Minus);
            (&p - &m).mapv(|x| x * C64::new(0.0, -0.5))
        }
    }
}

fn product_site(n: usize, site: usize, m: &Array2<C64>) -> Array2<C64> {
    // site is 1-based
    let mut out = array![[ONE]];
    for k in 1..=n {
        let factor = if k == site { m.clone() } else { Array2::eye(2) };
        out = kron(&out, &factor);
    }
    out
}

fn product_collective(n: usize, axis: Axis) -> Array2<C64> {
    match axis {
        Axis::Plus => {
            let x = product_collective(n, Axis::X);
            let y = product_collective(n, Axis::Y);
            &x + &y.mapv(|v| v * C64::new(0.0, 1.0))
        }
        Axis::Minus => {
            let x = product_collective(n, Axis::X);
            let y = product_collective(n, Axis::Y);
            &x - &y.mapv(|v| v * C64::new(0.0, 1.0))
        }
        _ => {
            let s = sigma(axis);
            let dim = 1usize << n;
            let mut out = Array2::<C64>::zeros((dim, dim));
            for i in 1..=n {
                out = out + product_site(n, i, &s);
            }
            out.mapv(|v| v * 0.5)
        }
    }
}

// ---------------------------------------------------------------------------
// public constructors
// ---------------------------------------------------------------------------

/// Collective spin operator J_axis on the spin factor, identity on the
/// ancilla. J_pm = J_x +- i J_y (no 1/2 on the ladder operators).
pub fn collective_op(layout: SpaceLayout, axis: Axis) -> Operator {
    let m = match layout.representation {
        Representation::DickeSymmetric => dicke_collective(layout.n_spins, axis),
        Representation::FullProduct => product_collective(layout.n_spins, axis),
    };
    Operator { matrix: lift_spin(&m, layout), layout }
}

/// J . J = J_x^2 + J_y^2 + J_z^2.
pub fn total_spin_squared(layout: SpaceLayout) -> Operator {
    let jx = collective_op(layout, Axis::X);
    let jy = collective_op(layout, Axis::Y);
    let jz = collective_op(layout, Axis::Z);
    &(&jx.matmul(&jx) + &jy.matmul(&jy)) + &jz.matmul(&jz)
}

/// Pauli operator sigma_axis at `site` (1-based), identity elsewhere.
/// Requires the full product representation.
pub fn local_pauli(layout: SpaceLayout, site: usize, axis: Axis) -> Result<Operator> {
    if layout.representation != Representation::FullProduct {
        return Err(Error::ProductRepresentationRequired);
    }
    if site == 0 || site > layout.n_spins {
        return Err(Error::SiteOutOfRange { site, n: layout.n_spins });
    }
    let m = product_site(layout.n_spins, site, &sigma(axis));
    Ok(Operator { matrix: lift_spin(&m, layout), layout })
}

/// Ancilla lowering operator A = sum_n sqrt(n+1) |n><n+1| on the ancilla
/// factor, identity on spins. For a qubit this is sigma_minus.
pub fn ancilla_lowering(layout: SpaceLayout) -> Result<Operator> {
    if !layout.has_ancilla() {
        return Err(Error::NoAncilla);
    }
    let a = ancilla_lowering_matrix(layout.ancilla_dim());
    Ok(Operator { matrix: lift_ancilla(&a, layout), layout })
}

/// A^dagger A (ancilla number operator), identity on spins.
pub fn ancilla_number(layout: SpaceLayout) -> Result<Operator> {
    if !layout.has_ancilla() {
        return Err(Error::NoAncilla);
    }
    let d = layout.ancilla_dim();
    let mut n = Array2::<C64>::zeros((d, d));
    for k in 0..d {
        n[(k, k)] = C64::new(k as f64, 0.0);
    }
    Ok(Operator { matrix: lift_ancilla(&n, layout), layout })
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Dicke-basis amplitudes of |theta, phi> for N spins (index k <-> m = k - j).
pub(crate) fn dicke_coherent_vector(n: usize, theta: f64, phi: f64) -> Array1<C64> {
    let mut v = Array1::<C64>::zeros(n + 1);
    for k in 0..=n {
        let amp = binomial(n, k).sqrt()
            * (theta / 2.0).cos().powi((n - k) as i32)
            * (theta / 2.0).sin().powi(k as i32);
        v[k] = C64::new(0.0, -(k as f64) * phi).exp() * amp;
    }
    v
}

/// Spin coherent state |theta, phi> as a pure density matrix, ancilla (if
/// any) in its ground state |0>.
pub fn spin_coherent_state(layout: SpaceLayout, theta: f64, phi: f64) -> QuantumState {
    let spin: Array1<C64> = match layout.representation {
        Representation::FullProduct => {
            let single = array![
                C64::new((theta / 2.0).cos(), 0.0),
                C64::new(0.0, -phi).exp() * (theta / 2.0).sin()
            ];
            let mut v = array![ONE];
            for _ in 0..layout.n_spins {
                let mut out = Array1::<C64>::zeros(v.len() * 2);
                for (i, &a) in v.iter().enumerate() {
                    out[2 * i] = a * single[0];
                    out[2 * i + 1] = a * single[1];
                }
                v = out;
            }
            v
        }
        Representation::DickeSymmetric => dicke_coherent_vector(layout.n_spins, theta, phi),
    };
    let full = if layout.has_ancilla() {
        let da = layout.ancilla_dim();
        let mut v = Array1::<C64>::zeros(spin.len() * da);
        for (i, &a) in spin.iter().enumerate() {
            v[i * da] = a;
        }
        v
    } else {
        spin
    };
    QuantumState::from_pure(&full, layout).expect("coherent state construction")
}

/// Reduced spin state rho_s = Tr_anc(rho).
pub fn partial_trace_ancilla(state: &QuantumState) -> Result<QuantumState> {
    let layout = state.layout();
    if !layout.has_ancilla() {
        return Err(Error::NoAncilla);
    }
    let ds = layout.spin_dim();
    let da = layout.ancilla_dim();
    let mut out = Array2::<C64>::zeros((ds, ds));
    let rho = state.rho();
    for i in 0..ds {
        for j in 0..ds {
            let mut acc = ZERO;
            for a in 0..da {
                acc += rho[(i * da + a, j * da + a)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(QuantumState { rho: out, layout: layout.without_ancilla() })
}

/// Collective rotation R(theta, phi) = exp[-i theta (J_x sin phi - J_y cos phi)],
/// identity on the ancilla.
pub fn rotation_operator(layout: SpaceLayout, theta: f64, phi: f64) -> Operator {
    let jx = collective_op(layout, Axis::X);
    let jy = collective_op(layout, Axis::Y);
    let gen = &jx.scale_re(phi.sin()) - &jy.scale_re(phi.cos());
    gen.unitary_exp(theta).expect("rotation generator is Hermitian")
}

/// Isometry V (2^N x (N+1)) embedding the Dicke basis into the symmetric
/// sector of the product space: column k is the normalized sum of all
/// bitstrings with k spins up.
pub fn symmetric_sector_isometry(n_spins: usize) -> Array2<C64> {
    let dim = 1usize << n_spins;
    let mut v = Array2::<C64>::zeros((dim, n_spins + 1));
    for b in 0..dim {
        let k = (b as u64).count_ones() as usize;
        v[(b, k)] = C64::new(1.0 / binomial(n_spins, k).sqrt(), 0.0);
    }
    v
}
