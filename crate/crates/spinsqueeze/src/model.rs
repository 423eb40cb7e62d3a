//! The spin-ensemble / dissipative-ancilla model.
//!
//! Rotating-frame Hamiltonian (all angular frequencies, hbar = 1):
//!
//! ```text
//! H = Delta A^dag A + Omega n_eta . J + lambda_bar (J_+ A + J_- A^dag)
//!     + H_IB + H_IC,
//! H_IB = (1/2) sum_i (omega_i - omega_bar) sigma_z^(i),
//! H_IC = sum_i (lambda_i - lambda_bar) (sigma_+^(i) A + sigma_-^(i) A^dag),
//! ```
//!
//! with ancilla relaxation gamma D[A]. Adiabatic elimination of the ancilla
//! (valid for Gamma = sqrt(Delta^2 + gamma^2/4) >> lambda_bar N, Omega,
//! delta_omega) yields the effective spin-only master equation with
//!
//! ```text
//! H_eff = H_IB + Omega n_eta . J
//!         + chi_eff (J_z^2 - J_z - J.J),      chi_eff = Delta lambda^2 / Gamma^2,
//! gamma_eff D[J_-],                           gamma_eff = lambda^2 gamma / Gamma^2.
//! ```
//!
//! The crossover chi_eff/gamma_eff = Delta/gamma separates the one-axis
//! twisting regime (Delta >> gamma) from driven collective relaxation
//! (Delta << gamma).

use ndarray::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::LindbladTerm;
use crate::linalg::{adjoint, max_abs_diff};
use crate::operators::{
    ancilla_lowering, ancilla_number, collective_op, local_pauli, total_spin_squared, Axis,
    Operator,
};
use crate::space::{Ancilla, Representation, SpaceLayout};
use crate::{C64, Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Full parameter record from which Hamiltonians and Lindbladians are built.
/// All frequencies are angular (rad/s).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_spins: usize,
    /// Mean spin-ancilla coupling lambda_bar.
    pub lambda_bar: f64,
    /// Standard deviation of the couplings.
    pub delta_lambda: f64,
    /// Explicit per-site couplings; sampled from the seed when absent.
    pub lambda_i: Option<Vec<f64>>,
    /// Standard deviation of the spin frequency offsets.
    pub delta_omega: f64,
    /// Explicit per-site offsets omega_i - omega_bar.
    pub omega_offsets: Option<Vec<f64>>,
    /// Ancilla detuning Delta = omega_anc - omega_bar.
    pub detuning: f64,
    /// Spin drive amplitude Omega.
    pub drive: f64,
    /// Spin drive phase eta; the drive axis is n_eta = (cos eta, sin eta, 0).
    pub drive_phase: f64,
    /// Ancilla relaxation rate.
    pub gamma: f64,
    pub ancilla: Ancilla,
    /// Seed for disorder sampling when explicit lists are absent.
    pub rng_seed: Option<u64>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_spins == 0 {
            return Err(Error::InvalidArgument("n_spins must be positive".into()));
        }
        for (name, v) in [
            ("lambda_bar", self.lambda_bar),
            ("delta_lambda", self.delta_lambda),
            ("delta_omega", self.delta_omega),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if let Some(l) = &self.lambda_i {
            if l.len() != self.n_spins {
                return Err(Error::InvalidArgument(format!(
                    "lambda_i has {} entries for N = {}",
                    l.len(),
                    self.n_spins
                )));
            }
            if l.iter().any(|&x| x <= 0.0) {
                return Err(Error::InvalidArgument("all lambda_i must be > 0".into()));
            }
        }
        if let Some(o) = &self.omega_offsets {
            if o.len() != self.n_spins {
                return Err(Error::InvalidArgument(format!(
                    "omega_offsets has {} entries for N = {}",
                    o.len(),
                    self.n_spins
                )));
            }
        }
        Ok(())
    }

    /// Collective coupling scale lambda_bar N.
    pub fn collective_coupling(&self) -> f64 {
        self.lambda_bar * self.n_spins as f64
    }

    pub fn with_detuning(mut self, delta: f64) -> Self {
        self.detuning = delta;
        self
    }

    pub fn with_drive(mut self, omega: f64, eta: f64) -> Self {
        self.drive = omega;
        self.drive_phase = eta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    pub fn homogeneous(mut self) -> Self {
        self.delta_lambda = 0.0;
        self.delta_omega = 0.0;
        self.lambda_i = None;
        self.omega_offsets = None;
        self
    }
}

/// Derived scales of the adiabatic elimination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConstants {
    /// Gamma = sqrt(Delta^2 + gamma^2/4).
    pub gamma_scale: f64,
    /// chi_eff = Delta lambda_bar^2 / Gamma^2.
    pub chi_eff: f64,
    /// gamma_eff = lambda_bar^2 gamma / Gamma^2.
    pub gamma_eff: f64,
}

pub fn effective_constants(spec: &ModelSpec) -> Result<EffectiveConstants> {
    let g2 = spec.detuning * spec.detuning + spec.gamma * spec.gamma / 4.0;
    if g2 <= 0.0 {
        return Err(Error::InvalidArgument(
            "effective dynamics require Gamma = sqrt(Delta^2 + gamma^2/4) > 0".into(),
        ));
    }
    let l2 = spec.lambda_bar * spec.lambda_bar;
    Ok(EffectiveConstants {
        gamma_scale: g2.sqrt(),
        chi_eff: spec.detuning * l2 / g2,
        gamma_eff: l2 * spec.gamma / g2,
    })
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

/// Named device presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Flux qubit coupled to NV centres: lambda_bar = 2pi x 12 kHz,
    /// delta_lambda = 2pi x 1 kHz, delta_omega = 2pi x 3 kHz,
    /// gamma = 0.0265 lambda_bar N, default Delta = 20 lambda_bar N.
    FqNv,
    /// Microwave resonator coupled to donor spins: lambda_bar = 2pi x 56 Hz,
    /// delta_lambda = 2pi x 4 Hz, delta_omega = 2pi x 15 Hz,
    /// gamma = 0.1 lambda_bar N, default Delta = 20 lambda_bar N.
    MrDonor,
    /// Driven collective relaxation with the flux qubit:
    /// gamma = 20 lambda_bar N, Delta = 0, Omega = 0.07 lambda_bar.
    DcrFq,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FQ_NV" => Ok(Preset::FqNv),
            "MR_DONOR" => Ok(Preset::MrDonor),
            "DCR_FQ" => Ok(Preset::DcrFq),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected FQ_NV, MR_DONOR or DCR_FQ)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::FqNv => "FQ_NV",
            Preset::MrDonor => "MR_DONOR",
            Preset::DcrFq => "DCR_FQ",
        }
    }

    /// Resolve the preset for a given ensemble size.
    pub fn spec(&self, n_spins: usize) -> ModelSpec {
        let n = n_spins as f64;
        match self {
            Preset::FqNv => {
                let lam = TWO_PI * 12e3;
                ModelSpec {
                    n_spins,
                    lambda_bar: lam,
                    delta_lambda: TWO_PI * 1e3,
                    lambda_i: None,
                    delta_omega: TWO_PI * 3e3,
                    omega_offsets: None,
                    detuning: 20.0 * lam * n,
                    drive: 0.0,
                    drive_phase: 0.0,
                    gamma: 0.0265 * lam * n,
                    ancilla: Ancilla::Qubit,
                    rng_seed: None,
                }
            }
            Preset::MrDonor => {
                let lam = TWO_PI * 56.0;
                ModelSpec {
                    n_spins,
                    lambda_bar: lam,
                    delta_lambda: TWO_PI * 4.0,
                    lambda_i: None,
                    delta_omega: TWO_PI * 15.0,
                    omega_offsets: None,
                    detuning: 20.0 * lam * n,
                    drive: 0.0,
                    drive_phase: 0.0,
                    gamma: 0.1 * lam * n,
                    ancilla: Ancilla::Boson(4),
                    rng_seed: None,
                }
            }
            Preset::DcrFq => {
                let lam = TWO_PI * 12e3;
                ModelSpec {
                    n_spins,
                    lambda_bar: lam,
                    delta_lambda: TWO_PI * 1e3,
                    lambda_i: None,
                    delta_omega: TWO_PI * 3e3,
                    omega_offsets: None,
                    detuning: 0.0,
                    drive: 0.07 * lam,
                    drive_phase: 0.0,
                    gamma: 20.0 * lam * n,
                    ancilla: Ancilla::Qubit,
                    rng_seed: None,
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// disorder
// ---------------------------------------------------------------------------

/// Draw per-site frequency offsets (mean re-centered to exactly zero) and
/// couplings (Gaussian around lambda_bar, resampled to stay positive).
pub fn sample_disorder(spec: &ModelSpec, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.delta_lambda >= spec.lambda_bar && spec.delta_lambda > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta_lambda {} >= lambda_bar {}: truncated sampling is pathological",
            spec.delta_lambda, spec.lambda_bar
        )));
    }
    let n = spec.n_spins;
    let dist_w = Normal::new(0.0, spec.delta_omega)
        .map_err(|e| Error::InvalidArgument(format!("delta_omega: {e}")))?;
    let mut offsets: Vec<f64> = (0..n).map(|_| dist_w.sample(rng)).collect();
    let mean = offsets.iter().sum::<f64>() / n as f64;
    for o in &mut offsets {
        *o -= mean;
    }
    let dist_l = Normal::new(spec.lambda_bar, spec.delta_lambda)
        .map_err(|e| Error::InvalidArgument(format!("delta_lambda: {e}")))?;
    let lambdas: Vec<f64> = (0..n)
        .map(|_| {
            let mut l = dist_l.sample(rng);
            while l <= 0.0 {
                l = dist_l.sample(rng);
            }
            l
        })
        .collect();
    Ok((offsets, lambdas))
}

/// Per-site offsets and couplings: explicit lists when given, genuinely
/// homogeneous when both widths vanish, otherwise sampled from the spec seed.
pub fn resolved_disorder(spec: &ModelSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = spec.n_spins;
    let offsets = spec.omega_offsets.clone();
    let lambdas = spec.lambda_i.clone();
    if let (Some(o), Some(l)) = (&offsets, &lambdas) {
        return Ok((o.clone(), l.clone()));
    }
    if spec.delta_omega == 0.0 && spec.delta_lambda == 0.0 {
        return Ok((
            offsets.unwrap_or_else(|| vec![0.0; n]),
            lambdas.unwrap_or_else(|| vec![spec.lambda_bar; n]),
        ));
    }
    let seed = spec.rng_seed.ok_or_else(|| {
        Error::InvalidArgument(
            "disorder widths are nonzero but neither explicit lists nor rng_seed are set".into(),
        )
    })?;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (sampled_offsets, sampled_lambdas) = sample_disorder(spec, &mut rng)?;
    Ok((
        offsets.unwrap_or(sampled_offsets),
        lambdas.unwrap_or(sampled_lambdas),
    ))
}

fn is_homogeneous(offsets: &[f64], lambdas: &[f64], lambda_bar: f64) -> bool {
    let scale = lambda_bar.abs().max(1e-300);
    offsets.iter().all(|&x| x == 0.0)
        && lambdas.iter().all(|&l| (l - lambda_bar).abs() < 1e-15 * scale)
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

/// Drive term Omega n_eta . J.
pub fn drive_operator(layout: SpaceLayout, omega: f64, eta: f64) -> Operator {
    let jx = collective_op(layout, Axis::X);
    let jy = collective_op(layout, Axis::Y);
    (&jx.scale_re(eta.cos()) + &jy.scale_re(eta.sin())).scale_re(omega)
}

/// Full rotating-frame model: Hamiltonian and collapse channels.
pub fn build_full(spec: &ModelSpec, layout: SpaceLayout) -> Result<(Operator, Vec<LindbladTerm>)> {
    spec.validate()?;
    if layout.ancilla != spec.ancilla {
        return Err(Error::LayoutMismatch(format!(
            "layout ancilla {:?} differs from spec ancilla {:?}",
            layout.ancilla, spec.ancilla
        )));
    }
    if !layout.has_ancilla() {
        return Err(Error::NoAncilla);
    }
    if layout.n_spins != spec.n_spins {
        return Err(Error::LayoutMismatch("layout N differs from spec N".into()));
    }
    let (offsets, lambdas) = resolved_disorder(spec)?;
    let homogeneous = is_homogeneous(&offsets, &lambdas, spec.lambda_bar);
    if layout.representation == Representation::DickeSymmetric && !homogeneous {
        return Err(Error::ProductRepresentationRequired);
    }

    let a = ancilla_lowering(layout)?;
    let ad = a.adjoint();
    let num = ancilla_number(layout)?;
    let jp = collective_op(layout, Axis::Plus);
    let jm = collective_op(layout, Axis::Minus);

    let mut h = num.scale_re(spec.detuning);
    if spec.drive != 0.0 {
        h = &h + &drive_operator(layout, spec.drive, spec.drive_phase);
    }
    h = &h + &(&jp.matmul(&a) + &jm.matmul(&ad)).scale_re(spec.lambda_bar);

    if !homogeneous {
        // H_IB + H_IC need per-site operators
        for (i, &off) in offsets.iter().enumerate() {
            if off != 0.0 {
                let sz = local_pauli(layout, i + 1, Axis::Z)?;
                h = &h + &sz.scale_re(0.5 * off);
            }
        }
        for (i, &li) in lambdas.iter().enumerate() {
            let dl = li - spec.lambda_bar;
            if dl != 0.0 {
                let sp = local_pauli(layout, i + 1, Axis::Plus)?;
                let sm = local_pauli(layout, i + 1, Axis::Minus)?;
                h = &h + &(&sp.matmul(&a) + &sm.matmul(&ad)).scale_re(dl);
            }
        }
    }

    let mut terms = Vec::new();
    if spec.gamma > 0.0 {
        terms.push(LindbladTerm::new(spec.gamma, a)?);
    }
    Ok((h, terms))
}

/// Adiabatically eliminated spin-only model; requires a layout without
/// ancilla and Gamma > 0.
pub fn build_effective(spec: &ModelSpec, layout: SpaceLayout) -> Result<(Operator, Vec<LindbladTerm>)> {
    spec.validate()?;
    if layout.has_ancilla() {
        return Err(Error::LayoutMismatch("effective model is spin-only; drop the ancilla".into()));
    }
    if layout.n_spins != spec.n_spins {
        return Err(Error::LayoutMismatch("layout N differs from spec N".into()));
    }
    let consts = effective_constants(spec)?;
    let (offsets, lambdas) = resolved_disorder(spec)?;
    let homogeneous = is_homogeneous(&offsets, &lambdas, spec.lambda_bar);
    if layout.representation == Representation::DickeSymmetric && !homogeneous {
        return Err(Error::ProductRepresentationRequired);
    }

    let jz = collective_op(layout, Axis::Z);
    let jj = total_spin_squared(layout);
    let mut h = drive_operator(layout, spec.drive, spec.drive_phase);
    if consts.chi_eff != 0.0 {
        let twist = &(&jz.matmul(&jz) - &jz) - &jj;
        h = &h + &twist.scale_re(consts.chi_eff);
    }
    if !homogeneous {
        for (i, &off) in offsets.iter().enumerate() {
            if off != 0.0 {
                let sz = local_pauli(layout, i + 1, Axis::Z)?;
                h = &h + &sz.scale_re(0.5 * off);
            }
        }
    }
    let mut terms = Vec::new();
    if consts.gamma_eff > 0.0 {
        terms.push(LindbladTerm::new(consts.gamma_eff, collective_op(layout, Axis::Minus))?);
    }
    Ok((h, terms))
}

/// Ideal one-axis twisting H = chi Jz^2.
pub fn build_ideal_oat(n: usize, chi: f64, layout: SpaceLayout) -> (Operator, Vec<LindbladTerm>) {
    assert_eq!(layout.n_spins, n, "layout N differs");
    let jz = collective_op(layout, Axis::Z);
    (jz.matmul(&jz).scale_re(chi), Vec::new())
}

/// Drive-averaged effective Hamiltonian
/// H' = -(chi_eff/2) (n_eta . J)^2 - (chi_eff/2) J.J, valid for
/// Omega >> N chi_eff.
pub fn build_driven_oat_effective(
    spec: &ModelSpec,
    layout: SpaceLayout,
) -> Result<(Operator, Vec<LindbladTerm>)> {
    let consts = effective_constants(spec)?;
    let jx = collective_op(layout, Axis::X);
    let jy = collective_op(layout, Axis::Y);
    let jn = &jx.scale_re(spec.drive_phase.cos()) + &jy.scale_re(spec.drive_phase.sin());
    let jj = total_spin_squared(layout);
    let h = (&jn.matmul(&jn) + &jj).scale_re(-0.5 * consts.chi_eff);
    Ok((h, Vec::new()))
}

/// Ratio Omega / (N chi_eff); the drive-averaged Hamiltonian needs this to
/// be large. Advisory only.
pub fn driven_oat_condition(spec: &ModelSpec) -> Result<f64> {
    let consts = effective_constants(spec)?;
    Ok(spec.drive / (spec.n_spins as f64 * consts.chi_eff.abs()).max(1e-300))
}

// ---------------------------------------------------------------------------
// Reiter-Sorensen effective operators
// ---------------------------------------------------------------------------

/// Hamiltonian decomposition H = V_g + V_e + V_+ + V_- with respect to the
/// ancilla ground projector.
#[derive(Clone, Debug)]
pub struct RsParts {
    pub v_g: Operator,
    pub v_e: Operator,
    pub v_plus: Operator,
    pub v_minus: Operator,
    pub projector_ground: Operator,
}

/// How to treat the excited-subspace Hamiltonian inside V_NH.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VnhApprox {
    /// Keep drive, broadening and intra-excited couplings in V_e.
    Full,
    /// Keep only the detuning ladder Delta A^dag A (the closed-form step).
    DetuningOnly,
}

/// Decompose the full model Hamiltonian for the effective-operator
/// elimination. `vnh` selects whether V_e retains drive/broadening or is
/// reduced to the bare detuning ladder.
pub fn rs_parts(spec: &ModelSpec, layout: SpaceLayout, vnh: VnhApprox) -> Result<RsParts> {
    let (h, _) = build_full(spec, layout)?;
    let da = layout.ancilla_dim();
    let ds = layout.spin_dim();
    let mut pg_anc = Array2::<C64>::zeros((da, da));
    pg_anc[(0, 0)] = C64::new(1.0, 0.0);
    let pg = Operator::new(crate::linalg::kron(&Array2::eye(ds), &pg_anc), layout)?;
    let pe = &Operator::identity(layout) - &pg;
    let v_g = pg.matmul(&h).matmul(&pg);
    let v_plus = pe.matmul(&h).matmul(&pg);
    let v_minus = pg.matmul(&h).matmul(&pe);
    let v_e = match vnh {
        VnhApprox::Full => pe.matmul(&h).matmul(&pe),
        VnhApprox::DetuningOnly => ancilla_number(layout)?.scale_re(spec.detuning),
    };
    Ok(RsParts { v_g, v_e, v_plus, v_minus, projector_ground: pg })
}

/// Generic Reiter-Sorensen elimination: effective Hamiltonian and Lindblad
/// operator
///
/// ```text
/// V_eff = -1/2 V_- [V_NH^-1 + (V_NH^-1)^dag] V_+ + V_g,
/// L_eff = sqrt(gamma) A V_NH^-1 V_+,   V_NH = V_e - (i gamma / 2) A^dag A,
/// ```
///
/// with V_NH inverted on the excited subspace only (ground block zeroed).
pub fn reiter_sorensen(parts: &RsParts, a: &Operator, gamma: f64) -> Result<(Operator, Operator)> {
    let layout = a.layout();
    let pg = &parts.projector_ground;
    let scale = 1.0 + pg.max_abs();
    let p2 = pg.matmul(pg);
    if max_abs_diff(p2.matrix(), pg.matrix()) > 1e-12 * scale {
        return Err(Error::InvalidArgument("projector_ground is not idempotent".into()));
    }
    // consistency of the block decomposition with H = sum of the parts
    let h_total = &(&parts.v_g + &parts.v_e) + &(&parts.v_plus + &parts.v_minus);
    let hs = 1.0 + h_total.max_abs();
    let pe = &Operator::identity(layout) - pg;
    let checks = [
        (&parts.v_g, pg.matmul(&h_total).matmul(pg)),
        (&parts.v_plus, pe.matmul(&h_total).matmul(pg)),
        (&parts.v_minus, pg.matmul(&h_total).matmul(&pe)),
    ];
    for (got, want) in checks {
        if max_abs_diff(got.matrix(), want.matrix()) > 1e-12 * hs {
            return Err(Error::InvalidArgument(
                "V_g/V_+/V_- are inconsistent with the P_g H P_g block structure".into(),
            ));
        }
    }

    let num = a.adjoint().matmul(a);
    let v_nh = &parts.v_e - &num.scale(C64::new(0.0, 0.5 * gamma));

    // invert on the excited subspace only
    let n = layout.total_dim();
    let excited: Vec<usize> = (0..n).filter(|&i| pg.matrix()[(i, i)].re < 0.5).collect();
    let ne = excited.len();
    let mut sub = Array2::<C64>::zeros((ne, ne));
    for (r, &i) in excited.iter().enumerate() {
        for (c, &j) in excited.iter().enumerate() {
            sub[(r, c)] = v_nh.matrix()[(i, j)];
        }
    }
    let lu = ndarray_linalg::Factorize::factorize(&sub)
        .map_err(|_| Error::Singular("V_NH is singular on the excited subspace".into()))?;
    let mut inv = Array2::<C64>::zeros((n, n));
    for (c, &j) in excited.iter().enumerate() {
        let mut e = Array1::<C64>::zeros(ne);
        e[c] = C64::new(1.0, 0.0);
        let col = ndarray_linalg::Solve::solve(&lu, &e)
            .map_err(|_| Error::Singular("V_NH is singular on the excited subspace".into()))?;
        if col.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::Singular("V_NH inverse overflowed".into()));
        }
        for (r, &i) in excited.iter().enumerate() {
            inv[(i, j)] = col[r];
        }
    }
    let v_inv = Operator::new(inv, layout)?;
    let sym = &v_inv + &Operator::new(adjoint(v_inv.matrix()), layout)?;
    let v_eff = &parts.v_minus.matmul(&sym).matmul(&parts.v_plus).scale_re(-0.5) + &parts.v_g;
    let l_eff = a.matmul(&v_inv).matmul(&parts.v_plus).scale_re(gamma.sqrt());
    Ok((v_eff, l_eff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis;
    use crate::dynamics::{evolve, IntegratorConfig, Schedule, Segment};
    use crate::linalg::kron;
    use crate::operators::{spin_coherent_state, symmetric_sector_isometry, QuantumState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn bare_spec(n: usize) -> ModelSpec {
        ModelSpec {
            n_spins: n,
            lambda_bar: 1.0,
            delta_lambda: 0.0,
            lambda_i: None,
            delta_omega: 0.0,
            omega_offsets: None,
            detuning: 0.0,
            drive: 0.0,
            drive_phase: 0.0,
            gamma: 0.0,
            ancilla: Ancilla::Qubit,
            rng_seed: None,
        }
    }

    #[test]
    fn effective_constants_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let spec = ModelSpec {
                detuning: rng.gen_range(-5.0..5.0),
                gamma: rng.gen_range(0.01..3.0),
                lambda_bar: rng.gen_range(0.1..2.0),
                ..bare_spec(4)
            };
            let c = effective_constants(&spec).unwrap();
            let g2 = spec.detuning.powi(2) + spec.gamma.powi(2) / 4.0;
            assert!((c.gamma_scale - g2.sqrt()).abs() < 1e-14 * g2.sqrt());
            let chi = spec.detuning * spec.lambda_bar.powi(2) / g2;
            let geff = spec.lambda_bar.powi(2) * spec.gamma / g2;
            assert!((c.chi_eff - chi).abs() <= 1e-14 * chi.abs());
            assert!((c.gamma_eff - geff).abs() <= 1e-14 * geff.abs());
            // regime classifier: chi_eff / gamma_eff = Delta / gamma exactly
            let lhs = c.chi_eff / c.gamma_eff;
            let rhs = spec.detuning / spec.gamma;
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
        assert!(effective_constants(&bare_spec(2)).is_err()); // Delta = gamma = 0
    }

    #[test]
    fn tavis_cummings_block() {
        // Dicke N=2, qubit ancilla, Delta = Omega = 0, no disorder:
        // H = lambda (J+ A + J- A^dag)
        let spec = bare_spec(2);
        let layout = SpaceLayout::dicke(2).with_ancilla(Ancilla::Qubit);
        let (h, terms) = build_full(&spec, layout).unwrap();
        assert!(terms.is_empty());
        assert_eq!(h.dim(), 6);
        assert!(h.hermiticity_deviation() < 1e-14);
        // J+ A |m=0, anc 1> = sqrt(2) |m=1, anc 0>
        let row = 2 * 2; // m index 2 (m=+1), anc 0
        let col = 2 + 1; // m index 1 (m=0), anc 1
        assert!((h.matrix()[(row, col)] - c(2f64.sqrt(), 0.0)).norm() < 1e-14);
        // diagonal vanishes (Delta = 0)
        for i in 0..6 {
            assert!(h.matrix()[(i, i)].norm() < 1e-14);
        }
    }

    #[test]
    fn drive_phase_convention() {
        let layout = SpaceLayout::dicke(3).with_ancilla(Ancilla::Qubit);
        let spec = ModelSpec { drive: 0.7, lambda_bar: 0.0, ..bare_spec(3) };
        // lambda_bar = 0 isolates the drive term
        let spec_x = ModelSpec { drive_phase: 0.0, ..spec.clone() };
        let (hx, _) = build_full(&spec_x, layout).unwrap();
        let want_x = collective_op(layout, Axis::X).scale_re(0.7);
        assert!(max_abs_diff(hx.matrix(), want_x.matrix()) < 1e-14);
        let spec_y = ModelSpec { drive_phase: std::f64::consts::FRAC_PI_2, ..spec };
        let (hy, _) = build_full(&spec_y, layout).unwrap();
        let want_y = collective_op(layout, Axis::Y).scale_re(0.7);
        assert!(max_abs_diff(hy.matrix(), want_y.matrix()) < 1e-13);
    }

    #[test]
    fn effective_reduces_to_dcr_at_zero_detuning() {
        // Delta = 0 -> chi_eff = 0: H = Omega n_eta . J only
        let spec = ModelSpec { gamma: 2.0, drive: 0.3, ..bare_spec(3) };
        let layout = SpaceLayout::dicke(3);
        let (h, terms) = build_effective(&spec, layout).unwrap();
        let want = drive_operator(layout, 0.3, 0.0);
        assert!(max_abs_diff(h.matrix(), want.matrix()) < 1e-14);
        assert_eq!(terms.len(), 1);
        let consts = effective_constants(&spec).unwrap();
        assert!((terms[0].rate - consts.gamma_eff).abs() < 1e-14);

        // gamma = 0 -> pure Hamiltonian dynamics
        let spec2 = ModelSpec { detuning: 1.5, ..bare_spec(3) };
        let (_, terms2) = build_effective(&spec2, layout).unwrap();
        assert!(terms2.is_empty());
    }

    #[test]
    fn build_full_rejects_dicke_disorder() {
        let spec = ModelSpec { delta_omega: 0.1, rng_seed: Some(1), ..bare_spec(3) };
        let layout = SpaceLayout::dicke(3).with_ancilla(Ancilla::Qubit);
        assert!(build_full(&spec, layout).is_err());
        // missing seed with nonzero widths errors
        let spec2 = ModelSpec { delta_omega: 0.1, ..bare_spec(3) };
        let layout2 = SpaceLayout::product(3).with_ancilla(Ancilla::Qubit);
        assert!(build_full(&spec2, layout2).is_err());
    }

    #[test]
    fn disorder_sampling() {
        let spec = ModelSpec { delta_omega: 0.25, delta_lambda: 1.0 / 12.0, ..bare_spec(10_000) };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (offsets, lambdas) = sample_disorder(&spec, &mut rng).unwrap();
        let mean_w: f64 = offsets.iter().sum::<f64>() / offsets.len() as f64;
        assert!(mean_w.abs() < 1e-15);
        let std_w = (offsets.iter().map(|x| x * x).sum::<f64>() / offsets.len() as f64).sqrt();
        assert!((std_w - 0.25).abs() / 0.25 < 0.03, "std {std_w}");
        assert!(lambdas.iter().all(|&l| l > 0.0));
        let mean_l: f64 = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
        assert!((mean_l - 1.0).abs() < 0.01);

        // determinism
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = sample_disorder(&spec, &mut r1).unwrap();
        let b = sample_disorder(&spec, &mut r2).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);

        // zero widths -> exactly homogeneous
        let spec0 = bare_spec(5);
        let (o, l) = sample_disorder(&spec0, &mut rng).unwrap();
        assert!(o.iter().all(|&x| x == 0.0));
        assert!(l.iter().all(|&x| x == 1.0));

        // pathological truncation rejected
        let bad = ModelSpec { delta_lambda: 1.5, ..bare_spec(5) };
        assert!(sample_disorder(&bad, &mut rng).is_err());
    }

    #[test]
    fn ideal_oat_inert_for_single_spin() {
        let layout = SpaceLayout::dicke(1);
        let (h, _) = build_ideal_oat(1, 2.0, layout);
        // Jz^2 = I/4 for N = 1, scaled by chi = 2
        let want = Operator::identity(layout).scale_re(0.5);
        assert!(max_abs_diff(h.matrix(), want.matrix()) < 1e-15);
    }

    #[test]
    fn oat_n2_maximal_entanglement() {
        // chi t = pi/2 on |pi/2, 0> gives a 1-spin marginal of purity 1/2
        let layout = SpaceLayout::product(2);
        let (h, _) = build_ideal_oat(2, 1.0, layout);
        let u = h.unitary_exp(std::f64::consts::FRAC_PI_2).unwrap();
        let s = spin_coherent_state(layout, std::f64::consts::FRAC_PI_2, 0.0).apply_unitary(&u);
        let mut red = Array2::<C64>::zeros((2, 2));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    red[(i, j)] += s.rho()[(2 * i + k, 2 * j + k)];
                }
            }
        }
        let purity: f64 = red.iter().map(|x| x.norm_sqr()).sum();
        assert!((purity - 0.5).abs() < 1e-12, "purity {purity}");
    }

    #[test]
    fn ideal_oat_argmin_matches_effective() {
        // the Jz and J.J terms of H_eff commute with Jz^2 and do not shift
        // the xi^2 minimum in time when Omega = 0
        let n = 5;
        let layout = SpaceLayout::dicke(n);
        let spec = ModelSpec { detuning: 8.0, gamma: 0.0, ..bare_spec(n) };
        let consts = effective_constants(&spec).unwrap();
        let (h_eff, terms) = build_effective(&spec, layout).unwrap();
        assert!(terms.is_empty());
        let (h_oat, _) = build_ideal_oat(n, consts.chi_eff, layout);
        let s0 = spin_coherent_state(layout, std::f64::consts::FRAC_PI_2, 0.0);
        let t_end = 3.0 * analysis::t_opt(n, consts.chi_eff.abs());
        let run = |h: &Operator| {
            let mut sched = Schedule::new(t_end / 400.0);
            sched.push_segment(Segment::new(h.clone(), vec![], t_end).unwrap());
            let traj = evolve(&s0, &sched, &IntegratorConfig::default()).unwrap();
            traj.min_xi2()
        };
        let m_eff = run(&h_eff);
        let m_oat = run(&h_oat);
        assert!((m_eff.t - m_oat.t).abs() / m_oat.t < 1e-3, "{} vs {}", m_eff.t, m_oat.t);
        assert!((m_eff.value - m_oat.value).abs() / m_oat.value < 1e-6);
    }

    #[test]
    fn driven_oat_effective_forms() {
        let n = 4;
        let layout = SpaceLayout::dicke(n);
        let spec = ModelSpec { detuning: 10.0, drive: 3.0, gamma: 0.0, ..bare_spec(n) };
        let consts = effective_constants(&spec).unwrap();
        let (h0, _) = build_driven_oat_effective(&spec, layout).unwrap();
        let jx = collective_op(layout, Axis::X);
        let jj = total_spin_squared(layout);
        let want = (&jx.matmul(&jx) + &jj).scale_re(-0.5 * consts.chi_eff);
        assert!(max_abs_diff(h0.matrix(), want.matrix()) < 1e-13);
        // eta -> eta + pi leaves it invariant
        let spec_pi = ModelSpec { drive_phase: std::f64::consts::PI, ..spec.clone() };
        let (hpi, _) = build_driven_oat_effective(&spec_pi, layout).unwrap();
        assert!(max_abs_diff(h0.matrix(), hpi.matrix()) < 1e-12);
        assert!(driven_oat_condition(&spec).unwrap() > 1.0);
    }

    #[test]
    fn full_vs_effective_small_system() {
        // Dicke N=3, strong detuning: traced full dynamics track the
        // effective model closely
        let n = 3;
        let spec = ModelSpec { detuning: 20.0 * n as f64, gamma: 0.5, ..bare_spec(n) };
        let layout_full = SpaceLayout::dicke(n).with_ancilla(Ancilla::Qubit);
        let layout_red = SpaceLayout::dicke(n);
        let (hf, tf) = build_full(&spec, layout_full).unwrap();
        let (he, te) = build_effective(&spec, layout_red).unwrap();
        let consts = effective_constants(&spec).unwrap();
        let t_end = analysis::t_opt(n, consts.chi_eff);
        let s0f = spin_coherent_state(layout_full, std::f64::consts::FRAC_PI_2, 0.0);
        let s0e = spin_coherent_state(layout_red, std::f64::consts::FRAC_PI_2, 0.0);
        let mut schf = Schedule::new(t_end / 16.0);
        schf.push_segment(Segment::new(hf, tf, t_end).unwrap());
        let mut sche = Schedule::new(t_end / 16.0);
        sche.push_segment(Segment::new(he, te, t_end).unwrap());
        let trf = evolve(&s0f, &schf, &IntegratorConfig::default()).unwrap();
        let tre = evolve(&s0e, &sche, &IntegratorConfig::default()).unwrap();
        let reduced = crate::operators::partial_trace_ancilla(&trf.final_state).unwrap();
        let d = analysis::trace_distance(&reduced, &tre.final_state);
        assert!(d < 0.02, "trace distance {d}");
    }

    #[test]
    fn full_product_vs_dicke_trajectories() {
        // homogeneous full model: product and Dicke agree after projection
        let n = 3;
        let spec = ModelSpec { detuning: 4.0, gamma: 0.8, ..bare_spec(n) };
        let lp = SpaceLayout::product(n).with_ancilla(Ancilla::Qubit);
        let ld = SpaceLayout::dicke(n).with_ancilla(Ancilla::Qubit);
        let (hp, tp) = build_full(&spec, lp).unwrap();
        let (hd, td) = build_full(&spec, ld).unwrap();
        let s0p = spin_coherent_state(lp, 1.2, 0.7);
        let s0d = spin_coherent_state(ld, 1.2, 0.7);
        let dur = 3.0;
        let mut schp = Schedule::new(dur / 4.0);
        schp.push_segment(Segment::new(hp, tp, dur).unwrap());
        let mut schd = Schedule::new(dur / 4.0);
        schd.push_segment(Segment::new(hd, td, dur).unwrap());
        let trp = evolve(&s0p, &schp, &IntegratorConfig::default()).unwrap();
        let trd = evolve(&s0d, &schd, &IntegratorConfig::default()).unwrap();
        let v = kron(&symmetric_sector_isometry(n), &Array2::eye(2));
        let proj = adjoint(&v).dot(trp.final_state.rho()).dot(&v);
        let projected = QuantumState::from_density_unchecked(proj, ld);
        let d = analysis::trace_distance(&projected, &trd.final_state);
        assert!(d < 1e-8, "trace distance {d}");
    }

    fn pg_block(da: usize) -> Array2<C64> {
        let mut m = Array2::<C64>::zeros((da, da));
        m[(0, 0)] = C64::new(1.0, 0.0);
        m
    }

    #[test]
    fn reiter_sorensen_closed_forms() {
        for (anc, n) in [(Ancilla::Qubit, 3), (Ancilla::Boson(4), 2)] {
            let spec = ModelSpec {
                detuning: 7.0,
                gamma: 1.3,
                drive: 0.4,
                ancilla: anc,
                ..bare_spec(n)
            };
            let layout = SpaceLayout::dicke(n).with_ancilla(anc);
            let a = ancilla_lowering(layout).unwrap();
            let parts = rs_parts(&spec, layout, VnhApprox::DetuningOnly).unwrap();
            let (v_eff, l_eff) = reiter_sorensen(&parts, &a, spec.gamma).unwrap();

            let consts = effective_constants(&spec).unwrap();
            let g2 = consts.gamma_scale * consts.gamma_scale;
            // L_eff = sqrt(gamma) lambda (Delta + i gamma/2)/Gamma^2 J_- (x) P_g
            let jm = collective_op(layout, Axis::Minus);
            let pg = &parts.projector_ground;
            let coef =
                C64::new(spec.detuning, 0.5 * spec.gamma) * spec.gamma.sqrt() * spec.lambda_bar / g2;
            let want_l = jm.matmul(pg).scale(coef);
            assert!(
                max_abs_diff(l_eff.matrix(), want_l.matrix()) < 1e-12,
                "L_eff mismatch for {anc:?}"
            );
            // D[L_eff] rate equals gamma_eff
            assert!((coef.norm_sqr() - consts.gamma_eff).abs() < 1e-12 * consts.gamma_eff);

            // V_eff reproduces the effective Hamiltonian on the ground block
            let spec_spin = ModelSpec { ancilla: Ancilla::None, ..spec.clone() };
            let (h_eff, _) = build_effective(&spec_spin, SpaceLayout::dicke(n)).unwrap();
            let lifted =
                Operator::new(kron(h_eff.matrix(), &pg_block(layout.ancilla_dim())), layout).unwrap();
            assert!(
                max_abs_diff(v_eff.matrix(), lifted.matrix()) < 1e-12,
                "V_eff mismatch for {anc:?}"
            );
        }
    }

    #[test]
    fn reiter_sorensen_rejects_bad_parts() {
        let spec = ModelSpec { detuning: 2.0, gamma: 0.4, ..bare_spec(2) };
        let layout = SpaceLayout::dicke(2).with_ancilla(Ancilla::Qubit);
        let a = ancilla_lowering(layout).unwrap();
        let mut parts = rs_parts(&spec, layout, VnhApprox::Full).unwrap();
        parts.v_g = &parts.v_g + &Operator::identity(layout).scale_re(0.3);
        assert!(reiter_sorensen(&parts, &a, spec.gamma).is_err());
    }

    #[test]
    fn presets_resolve() {
        let s = Preset::FqNv.spec(500);
        assert!((s.lambda_bar - TWO_PI * 12e3).abs() < 1e-9);
        assert!((s.gamma - 0.0265 * s.lambda_bar * 500.0).abs() < 1e-6);
        // gamma ~ 1 MHz for N = 500 as quoted
        assert!((s.gamma - 1e6).abs() / 1e6 < 0.01);
        let d = Preset::DcrFq.spec(6);
        assert_eq!(d.detuning, 0.0);
        assert!((d.gamma - 20.0 * d.lambda_bar * 6.0).abs() < 1e-9);
        assert!((d.drive - 0.07 * d.lambda_bar).abs() < 1e-12);
        assert_eq!("FQ_NV".parse::<Preset>().unwrap(), Preset::FqNv);
        assert!("NOPE".parse::<Preset>().is_err());
    }
}
