//! Lindblad master-equation integration over piecewise-constant schedules.
//!
//! Within a segment the generator is constant:
//!
//! ```text
//! drho/dt = -i [H, rho] + sum_k gamma_k D[L_k](rho),
//! D[L](rho) = L rho L^dag - 1/2 {L^dag L, rho}
//! ```
//!
//! with H already divided by hbar (angular-frequency units). Instantaneous
//! unitaries (pulses) and Hamiltonian swaps are modeled as schedule items
//! between segments.
//!
//! Three propagators are available: an adaptive Dormand-Prince 5(4) pair
//! (default), a fixed-step RK4 for deterministic regression baselines, and a
//! Krylov (Arnoldi) evaluation of the exponential action of the Liouvillian,
//! which is the scalable variant of the exact superoperator exponential in
//! [`evolve_expm`] and is much faster than explicit stepping for stiff or
//! rapidly oscillating generators.

use ndarray::prelude::*;
use ndarray_linalg::Solve;

use crate::analysis;
use crate::linalg::{adjoint, expm, frobenius, hermitize, kron};
use crate::operators::{ancilla_lowering, Operator, QuantumState};
use crate::space::{Ancilla, SpaceLayout};
use crate::{C64, Error, Result};

const I: C64 = C64::new(0.0, 1.0);

/// One collapse channel gamma * D[L].
#[derive(Clone, Debug)]
pub struct LindbladTerm {
    pub rate: f64,
    pub collapse: Operator,
}

impl LindbladTerm {
    pub fn new(rate: f64, collapse: Operator) -> Result<Self> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::InvalidArgument(format!("Lindblad rate {rate} must be finite and >= 0")));
        }
        Ok(LindbladTerm { rate, collapse })
    }
}

/// Evolution under a constant generator for a fixed duration.
#[derive(Clone, Debug)]
pub struct Segment {
    pub hamiltonian: Operator,
    pub lindblad_terms: Vec<LindbladTerm>,
    pub duration: f64,
}

impl Segment {
    pub fn new(hamiltonian: Operator, lindblad_terms: Vec<LindbladTerm>, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidArgument(format!("segment duration {duration} must be > 0")));
        }
        for t in &lindblad_terms {
            if t.collapse.layout() != hamiltonian.layout() {
                return Err(Error::LayoutMismatch("collapse operator layout differs from Hamiltonian".into()));
            }
        }
        Ok(Segment { hamiltonian, lindblad_terms, duration })
    }
}

/// Ordered schedule entry: a segment of continuous evolution or an
/// instantaneous unitary applied between segments.
#[derive(Clone, Debug)]
pub enum ScheduleItem {
    Evolve(Segment),
    Unitary(Operator),
}

/// Piecewise schedule with a fixed observable output cadence.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub items: Vec<ScheduleItem>,
    pub output_dt: f64,
}

impl Schedule {
    pub fn new(output_dt: f64) -> Self {
        Schedule { items: Vec::new(), output_dt }
    }

    pub fn push_segment(&mut self, seg: Segment) -> &mut Self {
        self.items.push(ScheduleItem::Evolve(seg));
        self
    }

    pub fn push_unitary(&mut self, u: Operator) -> &mut Self {
        self.items.push(ScheduleItem::Unitary(u));
        self
    }

    pub fn total_duration(&self) -> f64 {
        self.items
            .iter()
            .map(|i| match i {
                ScheduleItem::Evolve(s) => s.duration,
                ScheduleItem::Unitary(_) => 0.0,
            })
            .sum()
    }

    pub fn layout(&self) -> Option<SpaceLayout> {
        self.items.iter().find_map(|i| match i {
            ScheduleItem::Evolve(s) => Some(s.hamiltonian.layout()),
            ScheduleItem::Unitary(u) => Some(u.layout()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.output_dt > 0.0) {
            return Err(Error::InvalidArgument("output_dt must be > 0".into()));
        }
        let layout = self.layout().ok_or_else(|| Error::InvalidArgument("empty schedule".into()))?;
        for item in &self.items {
            match item {
                ScheduleItem::Evolve(s) => {
                    if s.hamiltonian.layout() != layout {
                        return Err(Error::LayoutMismatch("segments use different layouts".into()));
                    }
                    if s.duration <= 0.0 {
                        return Err(Error::InvalidArgument("segment duration must be > 0".into()));
                    }
                    if self.output_dt > s.duration * (1.0 + 1e-12) {
                        return Err(Error::InvalidArgument(format!(
                            "output_dt {} exceeds segment duration {}",
                            self.output_dt, s.duration
                        )));
                    }
                }
                ScheduleItem::Unitary(u) => {
                    if u.layout() != layout {
                        return Err(Error::LayoutMismatch("unitary uses a different layout".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Propagator selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Adaptive Dormand-Prince 5(4) embedded pair.
    Dopri45 { rtol: f64, atol: f64 },
    /// Fixed-step classical RK4.
    Rk4 { dt: f64 },
    /// Arnoldi approximation of exp(t L) acting on the state.
    KrylovExpm { tol: f64, dim: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct IntegratorConfig {
    pub method: Method,
    pub max_steps: usize,
    /// Keep a copy of the state at every output time.
    pub store_states: bool,
    /// Check the minimum eigenvalue at output times; abort below the floor.
    pub check_positivity: bool,
    pub positivity_floor: f64,
    /// Trace drift beyond this flags the trajectory.
    pub trace_tol: f64,
    /// Abort threshold for the top-level boson population.
    pub truncation_guard: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Dopri45 { rtol: 1e-8, atol: 1e-10 },
            max_steps: 100_000_000,
            store_states: false,
            check_positivity: true,
            positivity_floor: -1e-6,
            trace_tol: 1e-7,
            truncation_guard: 1e-6,
        }
    }
}

impl IntegratorConfig {
    pub fn krylov() -> Self {
        IntegratorConfig { method: Method::KrylovExpm { tol: 1e-9, dim: 24 }, ..Default::default() }
    }
}

/// Observables recorded at one output time.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub xi2: f64,
    pub xi2_defined: bool,
    pub mean_spin: [f64; 3],
    pub trace_err: f64,
    pub purity: f64,
    pub ancilla_population: f64,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IntegratorStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub rhs_evals: usize,
    pub max_hermitization_correction: f64,
    pub max_trace_drift: f64,
}

/// Time series of recorded observables plus the final state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// Snapshots at output times when requested in the config.
    pub states: Option<Vec<QuantumState>>,
    pub final_state: QuantumState,
    pub stats: IntegratorStats,
    /// Set when |tr rho - 1| exceeded the trace tolerance at any point.
    pub trace_flagged: bool,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn xi2(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.xi2).collect()
    }

    pub fn min_xi2(&self) -> analysis::TimeSeriesMin {
        analysis::min_over_time(&self.times(), &self.xi2())
    }
}

// ---------------------------------------------------------------------------
// RHS engine
// ---------------------------------------------------------------------------

/// Structured fast path: collapse operator equals I_spin (x) A where A is the
/// ancilla lowering operator. The dissipator then reduces to index
/// manipulations on the ancilla blocks.
#[derive(Clone, Copy, Debug)]
struct AncillaLoweringShape {
    ds: usize,
    da: usize,
}

struct PreparedTerm {
    rate: f64,
    l: Array2<C64>,
    ldl: Array2<C64>,
    fast: Option<AncillaLoweringShape>,
}

pub(crate) struct Prepared {
    h: Array2<C64>,
    terms: Vec<PreparedTerm>,
    /// Rough magnitude of the generator, for step-size heuristics.
    anorm: f64,
}

impl Prepared {
    pub(crate) fn new(h: &Operator, terms: &[LindbladTerm]) -> Result<Self> {
        let scale = 1.0 + h.max_abs();
        h.assert_hermitian(1e-10 * scale)?;
        let layout = h.layout();
        let mut prepared = Vec::with_capacity(terms.len());
        for t in terms {
            if !t.rate.is_finite() || t.rate < 0.0 {
                return Err(Error::InvalidArgument("Lindblad rate must be finite and >= 0".into()));
            }
            if t.collapse.layout() != layout {
                return Err(Error::LayoutMismatch("collapse operator layout differs from H".into()));
            }
            let l = t.collapse.matrix().clone();
            let ldl = adjoint(&l).dot(&l);
            let fast = detect_ancilla_lowering(&l, layout);
            prepared.push(PreparedTerm { rate: t.rate, l, ldl, fast });
        }
        let mut anorm = 2.0 * one_norm(h.matrix());
        for t in &prepared {
            anorm += 2.0 * t.rate * one_norm(&t.ldl);
        }
        Ok(Prepared { h: hermitize(h.matrix()), terms: prepared, anorm })
    }

    fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// RHS for Hermitian input: the commutator needs one product since
    /// (H rho)^dag = rho H, and rho L^dag L = (L^dag L rho)^dag.
    fn rhs_hermitian<S: ndarray::Data<Elem = C64>>(
        &self,
        rho: &ndarray::ArrayBase<S, ndarray::Ix2>,
        out: &mut Array2<C64>,
    ) {
        let x = self.h.dot(rho);
        let n = self.dim();
        {
            let xs = x.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("standard layout");
            for i in 0..n {
                let d = xs[i * n + i];
                os[i * n + i] = C64::new(2.0 * d.im, 0.0);
                for j in (i + 1)..n {
                    let a = xs[i * n + j];
                    let b = xs[j * n + i];
                    let v = -I * (a - b.conj());
                    os[i * n + j] = v;
                    os[j * n + i] = v.conj();
                }
            }
        }
        for term in &self.terms {
            if let Some(shape) = term.fast {
                dissipator_ancilla_lowering(&rho.view(), term.rate, shape, out);
            } else {
                let y = term.l.dot(rho);
                let z = y.dot(&adjoint(&term.l));
                let w = term.ldl.dot(rho);
                let g = term.rate;
                for i in 0..n {
                    for j in 0..n {
                        out[(i, j)] += g * (z[(i, j)] - 0.5 * (w[(i, j)] + w[(j, i)].conj()));
                    }
                }
            }
        }
    }

    /// RHS for arbitrary (not necessarily Hermitian) input.
    fn rhs_general(&self, rho: &Array2<C64>, out: &mut Array2<C64>) {
        let hx = self.h.dot(rho);
        let xh = rho.dot(&self.h);
        azip_sub_scaled(out, &hx, &xh);
        for term in &self.terms {
            if let Some(shape) = term.fast {
                dissipator_ancilla_lowering(&rho.view(), term.rate, shape, &mut *out);
            } else {
                let y = term.l.dot(rho);
                let z = y.dot(&adjoint(&term.l));
                let w = term.ldl.dot(rho);
                let v = rho.dot(&term.ldl);
                let g = term.rate;
                ndarray::Zip::from(&mut *out)
                    .and(&z)
                    .and(&w)
                    .and(&v)
                    .for_each(|o, &z, &w, &v| *o += g * (z - 0.5 * (w + v)));
            }
        }
    }
}

fn azip_sub_scaled(out: &mut Array2<C64>, hx: &Array2<C64>, xh: &Array2<C64>) {
    ndarray::Zip::from(out).and(hx).and(xh).for_each(|o, &a, &b| *o = -I * (a - b));
}

fn one_norm(a: &Array2<C64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        best = best.max(a.column(j).iter().map(|x| x.norm()).sum());
    }
    best
}

fn detect_ancilla_lowering(l: &Array2<C64>, layout: SpaceLayout) -> Option<AncillaLoweringShape> {
    if layout.ancilla == Ancilla::None {
        return None;
    }
    let reference = ancilla_lowering(layout).ok()?;
    let diff = crate::linalg::max_abs_diff(l, reference.matrix());
    if diff < 1e-14 {
        Some(AncillaLoweringShape { ds: layout.spin_dim(), da: layout.ancilla_dim() })
    } else {
        None
    }
}

/// gamma * D[I (x) A] accumulated into `out`, where A is the ancilla lowering
/// operator. Works for arbitrary input matrices.
fn dissipator_ancilla_lowering(
    rho: &ndarray::ArrayView2<C64>,
    rate: f64,
    shape: AncillaLoweringShape,
    out: &mut Array2<C64>,
) {
    let AncillaLoweringShape { ds, da } = shape;
    let n = ds * da;
    let rs = rho.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for si in 0..ds {
        for a in 0..da {
            let row = (si * da + a) * n;
            let fa = a as f64;
            let orow = &mut os[row..row + n];
            // anticommutator part: -(a + b)/2 scaling along the row
            for sj in 0..ds {
                let base = sj * da;
                for b in 0..da {
                    orow[base + b] += rate * (-0.5 * (fa + b as f64)) * rs[row + base + b];
                }
            }
            // jump part: sqrt((a+1)(b+1)) rho[(si, a+1), (sj, b+1)]
            if a + 1 < da {
                let rup = (si * da + a + 1) * n;
                for sj in 0..ds {
                    let base = sj * da;
                    for b in 0..da - 1 {
                        let amp = rate * (((a + 1) * (b + 1)) as f64).sqrt();
                        orow[base + b] += amp * rs[rup + base + b + 1];
                    }
                }
            }
        }
    }
}

/// drho/dt for the given Hamiltonian (pre-divided by hbar) and collapse
/// channels. Validates dimensions and Hermiticity of H.
pub fn lindblad_rhs(h: &Operator, terms: &[LindbladTerm], rho: &QuantumState) -> Result<Array2<C64>> {
    if rho.layout() != h.layout() {
        return Err(Error::LayoutMismatch("state layout differs from Hamiltonian".into()));
    }
    let p = Prepared::new(h, terms)?;
    let mut out = Array2::<C64>::zeros((p.dim(), p.dim()));
    p.rhs_general(rho.rho(), &mut out);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)
// ---------------------------------------------------------------------------

const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// b5 - b4 (error estimator weights, applied to k1..k7)
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Dopri {
    k: Vec<Array2<C64>>, // k1..k7
    ytmp: Array2<C64>,
    fsal_valid: bool,
}

impl Dopri {
    fn new(n: usize) -> Self {
        Dopri {
            k: (0..7).map(|_| Array2::zeros((n, n))).collect(),
            ytmp: Array2::zeros((n, n)),
            fsal_valid: false,
        }
    }
}

fn scaled_err_norm(err: &Array2<C64>, y0: &Array2<C64>, y1: &Array2<C64>, rtol: f64, atol: f64) -> f64 {
    let n2 = err.len() as f64;
    let mut acc = 0.0;
    for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
        let sc = atol + rtol * a.norm().max(b.norm());
        let r = e.norm() / sc;
        acc += r * r;
    }
    (acc / n2).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn dopri_integrate(
    p: &Prepared,
    rho: &mut Array2<C64>,
    t_span: f64,
    rtol: f64,
    atol: f64,
    stats: &mut IntegratorStats,
    ws: &mut Dopri,
    max_steps: usize,
) -> Result<()> {
    if t_span <= 0.0 {
        return Ok(());
    }
    let n = p.dim();
    let mut t = 0.0f64;
    // initial step: resolve the fastest scale conservatively
    let mut h = (0.1 / p.anorm.max(1e-300)).min(t_span);
    if !ws.fsal_valid {
        p.rhs_hermitian(rho, &mut ws.k[0]);
        stats.rhs_evals += 1;
    }
    while t < t_span * (1.0 - 1e-14) {
        if stats.steps_accepted + stats.steps_rejected > max_steps {
            return Err(Error::Integration(format!("step budget {max_steps} exhausted")));
        }
        h = h.min(t_span - t);
        if h < 1e-15 * t_span {
            return Err(Error::Integration("step size underflow".into()));
        }
        for stage in 0..6 {
            ws.ytmp.assign(rho);
            for (j, w) in DP_A[stage].iter().enumerate().take(stage + 1) {
                if *w != 0.0 {
                    let c = C64::new(h * w, 0.0);
                    let kj = &ws.k[j];
                    ndarray::Zip::from(&mut ws.ytmp).and(kj).for_each(|y, &k| *y += c * k);
                }
            }
            let (head, tail) = ws.k.split_at_mut(stage + 1);
            let _ = head;
            p.rhs_hermitian(&ws.ytmp, &mut tail[0]);
            stats.rhs_evals += 1;
        }
        // 5th-order solution sits in ytmp after the last stage loop pass
        // (stage 6 weights are DP_A[5] and its RHS is k7 = FSAL candidate)
        let y1 = ws.ytmp.clone();
        // error = h * sum e_i k_i
        let mut err = Array2::<C64>::zeros((n, n));
        for (i, w) in DP_E.iter().enumerate() {
            if *w != 0.0 {
                let c = C64::new(h * w, 0.0);
                ndarray::Zip::from(&mut err).and(&ws.k[i]).for_each(|e, &k| *e += c * k);
            }
        }
        let enorm = scaled_err_norm(&err, rho, &y1, rtol, atol);
        if enorm <= 1.0 {
            t += h;
            rho.assign(&y1);
            // re-Hermitize and log the correction size
            let mut corr = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = rho[(i, j)];
                    let b = rho[(j, i)].conj();
                    let m = 0.5 * (a + b);
                    corr += (a - m).norm_sqr() + (b - m).norm_sqr();
                    rho[(i, j)] = m;
                    rho[(j, i)] = m.conj();
                }
                let d = rho[(i, i)];
                rho[(i, i)] = C64::new(d.re, 0.0);
                corr += d.im * d.im;
            }
            stats.max_hermitization_correction = stats.max_hermitization_correction.max(corr.sqrt());
            stats.steps_accepted += 1;
            {
                let (head, tail) = ws.k.split_at_mut(6);
                head[0].assign(&tail[0]); // FSAL
            }
            ws.fsal_valid = true;
            let fac = if enorm == 0.0 { 5.0 } else { 0.9 * enorm.powf(-0.2) };
            h *= fac.clamp(0.2, 5.0);
        } else {
            stats.steps_rejected += 1;
            h *= (0.9 * enorm.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(())
}

fn rk4_integrate(
    p: &Prepared,
    rho: &mut Array2<C64>,
    t_span: f64,
    dt: f64,
    stats: &mut IntegratorStats,
) -> Result<()> {
    let n = p.dim();
    let steps = (t_span / dt).ceil().max(1.0) as usize;
    let h = t_span / steps as f64;
    let mut k1 = Array2::<C64>::zeros((n, n));
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    for _ in 0..steps {
        p.rhs_hermitian(rho, &mut k1);
        tmp.assign(rho);
        tmp.scaled_add(C64::new(0.5 * h, 0.0), &k1);
        p.rhs_hermitian(&tmp, &mut k2);
        tmp.assign(rho);
        tmp.scaled_add(C64::new(0.5 * h, 0.0), &k2);
        p.rhs_hermitian(&tmp, &mut k3);
        tmp.assign(rho);
        tmp.scaled_add(C64::new(h, 0.0), &k3);
        p.rhs_hermitian(&tmp, &mut k4);
        let c = C64::new(h / 6.0, 0.0);
        ndarray::Zip::from(&mut *rho)
            .and(&k1)
            .and(&k2)
            .and(&k3)
            .and(&k4)
            .for_each(|y, &a, &b, &cc, &d| *y += c * (a + 2.0 * b + 2.0 * cc + d));
        stats.rhs_evals += 4;
        stats.steps_accepted += 1;
    }
    *rho = hermitize(rho);
    Ok(())
}

// ---------------------------------------------------------------------------
// Krylov propagator
// ---------------------------------------------------------------------------

/// exp(t L) applied to a Hermitian matrix by the Arnoldi process in the real
/// inner-product space of Hermitian matrices (the Lindbladian is a real-linear
/// map on that space, so the Hessenberg matrix is real and the iterates stay
/// Hermitian). Substeps and local error control follow the usual corrected
/// Krylov scheme.
#[allow(clippy::too_many_arguments)]
fn krylov_integrate(
    p: &Prepared,
    rho: &mut Array2<C64>,
    t_span: f64,
    tol: f64,
    m: usize,
    stats: &mut IntegratorStats,
    max_steps: usize,
    tau_hint: &mut f64,
) -> Result<()> {
    if t_span <= 0.0 {
        return Ok(());
    }
    let n = p.dim();
    let n2 = n * n;
    let m = m.max(4).min(n2);
    let beta0 = frobenius(rho).max(1e-300);
    let budget_rate = tol * beta0 / t_span; // error budget per unit time
    let mut t_done = 0.0f64;
    // Krylov basis stored as rows of a dense (m+1) x n^2 matrix so the
    // Gram-Schmidt sweeps run through BLAS matrix-vector products.
    let mut basis = Array2::<C64>::zeros((m + 1, n2));
    let mut hess = vec![vec![0.0f64; m]; m + 1];
    let mut w_mat = Array2::<C64>::zeros((n, n));
    let mut w_conj = Array1::<C64>::zeros(n2);
    let mut dots = Array1::<C64>::zeros(m + 1);
    let mut coeff = Array1::<C64>::zeros(m + 1);
    // initial step-size guess (Expokit)
    let xm = 1.0 / m as f64;
    let fact = (((m + 1) as f64) / std::f64::consts::E).powi(m as i32 + 1)
        * (2.0 * std::f64::consts::PI * (m + 1) as f64).sqrt();
    let anorm = p.anorm.max(1e-300);
    let mut tau = if *tau_hint > 0.0 {
        tau_hint.min(t_span)
    } else {
        ((fact * budget_rate / (4.0 * beta0 * anorm)).powf(xm) / anorm).min(t_span)
    };
    tau = tau.max(t_span * 1e-12);

    while t_done < t_span * (1.0 - 1e-14) {
        if stats.steps_accepted > max_steps {
            return Err(Error::Integration(format!("Krylov step budget {max_steps} exhausted")));
        }
        let beta = frobenius(rho);
        if beta == 0.0 {
            return Ok(());
        }
        {
            let mut row0 = basis.row_mut(0);
            for (dst, src) in row0.iter_mut().zip(rho.iter()) {
                *dst = src / beta;
            }
        }
        for row in hess.iter_mut() {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut k_used = m;
        let mut happy = false;
        for j in 0..m {
            {
                let vj = basis.row(j).into_shape_with_order((n, n)).expect("shape");
                p.rhs_hermitian(&vj, &mut w_mat);
            }
            stats.rhs_evals += 1;
            let w_flat_slice = w_mat.as_slice_mut().expect("standard layout");
            let mut w_view =
                ndarray::ArrayViewMut1::from_shape(n2, w_flat_slice).expect("shape");
            let wnorm0 = w_view.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            // classical Gram-Schmidt against rows 0..=j; the inner products
            // <v_i, w> are real on the Hermitian subspace. One pass, with a
            // second only when cancellation was severe.
            let mut hnext = 0.0;
            for pass in 0..2 {
                ndarray::Zip::from(&mut w_conj).and(&w_view).for_each(|c, &w| *c = w.conj());
                let rows = basis.slice(s![0..=j, ..]);
                let mut d = dots.slice_mut(s![0..=j]);
                ndarray::linalg::general_mat_vec_mul(
                    C64::new(1.0, 0.0),
                    &rows,
                    &w_conj,
                    C64::new(0.0, 0.0),
                    &mut d,
                ); // d_i = conj(<v_i, w>)
                let mut c = coeff.slice_mut(s![0..=j]);
                for i in 0..=j {
                    let h = d[i].re;
                    hess[i][j] += h;
                    c[i] = C64::new(h, 0.0);
                }
                ndarray::linalg::general_mat_vec_mul(
                    C64::new(-1.0, 0.0),
                    &rows.t(),
                    &c.view(),
                    C64::new(1.0, 0.0),
                    &mut w_view,
                );
                hnext = w_view.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                if pass == 0 && hnext > 0.5 * wnorm0 {
                    break;
                }
            }
            hess[j + 1][j] = hnext;
            if hnext < 1e-12 * anorm {
                k_used = j + 1;
                happy = true;
                break;
            }
            let inv = C64::new(1.0 / hnext, 0.0);
            let mut next = basis.row_mut(j + 1);
            for (dst, src) in next.iter_mut().zip(w_view.iter()) {
                *dst = src * inv;
            }
        }
        let avnorm = if happy {
            0.0
        } else {
            let vk = basis.row(k_used).into_shape_with_order((n, n)).expect("shape");
            p.rhs_hermitian(&vk, &mut w_mat);
            stats.rhs_evals += 1;
            frobenius(&w_mat)
        };

        // adaptive tau loop
        let mut reductions = 0;
        loop {
            tau = tau.min(t_span - t_done);
            let kk = k_used;
            let naug = kk + 2;
            let mut haug = Array2::<C64>::zeros((naug, naug));
            for jj in 0..kk {
                for ii in 0..(jj + 2).min(kk) {
                    haug[(ii, jj)] = C64::new(tau * hess[ii][jj], 0.0);
                }
            }
            if !happy {
                haug[(kk, kk - 1)] = C64::new(tau * hess[kk][kk - 1], 0.0);
                haug[(kk + 1, kk)] = C64::new(tau, 0.0);
            }
            let f = expm(&haug)?;
            let (err_loc, ok) = if happy {
                (0.0, true)
            } else {
                let p1 = (beta * f[(kk, 0)]).norm();
                let p2 = (beta * f[(kk + 1, 0)]).norm() * avnorm;
                let err = if p1 > 10.0 * p2 {
                    p2
                } else if p1 > p2 {
                    p1 * p2 / (p1 - p2)
                } else {
                    p1
                };
                (err, err <= 1.2 * tau * budget_rate)
            };
            if ok {
                // rho = beta * sum_i F[i,0] v_i over k_used+1 vectors
                let cols = if happy { kk } else { kk + 1 };
                let coeff = Array1::from_iter((0..cols).map(|i| f[(i, 0)] * beta));
                let combo = coeff.dot(&basis.slice(s![0..cols, ..]));
                let acc = Array2::from_shape_vec((n, n), combo.to_vec()).expect("shape");
                *rho = hermitize(&acc);
                t_done += tau;
                stats.steps_accepted += 1;
                let grow = if err_loc == 0.0 {
                    5.0
                } else {
                    (0.9 * (tau * budget_rate / err_loc).powf(xm)).clamp(0.2, 5.0)
                };
                tau *= grow;
                break;
            }
            reductions += 1;
            stats.steps_rejected += 1;
            if reductions > 30 {
                return Err(Error::Integration("Krylov step size control failed".into()));
            }
            tau *= (0.9 * (tau * budget_rate / err_loc).powf(xm)).clamp(0.1, 0.9);
        }
    }
    *tau_hint = tau;
    Ok(())
}

// ---------------------------------------------------------------------------
// evolve
// ---------------------------------------------------------------------------

fn record_observables(
    rho: &Array2<C64>,
    layout: SpaceLayout,
    t: f64,
    config: &IntegratorConfig,
) -> Result<TrajectoryRecord> {
    let state = QuantumState::from_density_unchecked(rho.clone(), layout);
    let trace_err = (state.trace() - C64::new(1.0, 0.0)).norm();
    let purity = state.purity();
    let da = layout.ancilla_dim();
    let mut anc_pop = 0.0;
    if da > 1 {
        let ds = layout.spin_dim();
        for s in 0..ds {
            for a in 1..da {
                anc_pop += a as f64 * rho[(s * da + a, s * da + a)].re;
            }
        }
    }
    let min_eig = if config.check_positivity {
        let me = crate::linalg::min_eigval_hermitian(&hermitize(rho))?;
        if me < config.positivity_floor {
            return Err(Error::PositivityViolation { min_eig: me });
        }
        Some(me)
    } else {
        None
    };
    if let Ancilla::Boson(_) = layout.ancilla {
        let top = state.top_ancilla_population();
        if top > config.truncation_guard {
            return Err(Error::TruncationGuard { pop: top });
        }
    }
    let rep = analysis::wineland_xi2(&state);
    Ok(TrajectoryRecord {
        t,
        xi2: rep.xi2,
        xi2_defined: rep.defined,
        mean_spin: rep.mean_spin,
        trace_err,
        purity,
        ancilla_population: anc_pop,
        min_eigenvalue: min_eig,
    })
}

/// Integrate a state through a schedule, recording observables every
/// `output_dt` (first record at t = 0) and applying instantaneous unitaries
/// between segments.
pub fn evolve(state: &QuantumState, schedule: &Schedule, config: &IntegratorConfig) -> Result<Trajectory> {
    schedule.validate()?;
    let layout = state.layout();
    if schedule.layout() != Some(layout) {
        return Err(Error::LayoutMismatch("state layout differs from schedule".into()));
    }
    let mut rho = hermitize(state.rho());
    let mut stats = IntegratorStats::default();
    let mut records = Vec::new();
    let mut states: Option<Vec<QuantumState>> = if config.store_states { Some(Vec::new()) } else { None };
    let mut trace_flagged = false;

    let push_record = |rho: &Array2<C64>, t: f64, stats: &mut IntegratorStats,
                           records: &mut Vec<TrajectoryRecord>, states: &mut Option<Vec<QuantumState>>,
                           flagged: &mut bool|
     -> Result<()> {
        let rec = record_observables(rho, layout, t, config)?;
        stats.max_trace_drift = stats.max_trace_drift.max(rec.trace_err);
        if rec.trace_err > config.trace_tol {
            *flagged = true;
        }
        records.push(rec);
        if let Some(v) = states {
            v.push(QuantumState::from_density_unchecked(rho.clone(), layout));
        }
        Ok(())
    };

    let mut t = 0.0f64;
    let mut krylov_tau = 0.0f64;
    push_record(&rho, t, &mut stats, &mut records, &mut states, &mut trace_flagged)?;
    let mut next_record = schedule.output_dt;
    let eps = 1e-12 * schedule.output_dt.max(schedule.total_duration());

    for item in &schedule.items {
        match item {
            ScheduleItem::Unitary(u) => {
                rho = u.matrix().dot(&rho).dot(&adjoint(u.matrix()));
            }
            ScheduleItem::Evolve(seg) => {
                let p = Prepared::new(&seg.hamiltonian, &seg.lindblad_terms)?;
                let seg_end = t + seg.duration;
                let mut ws = Dopri::new(p.dim());
                while t < seg_end - eps {
                    let target = next_record.min(seg_end);
                    let span = target - t;
                    match config.method {
                        Method::Dopri45 { rtol, atol } => {
                            dopri_integrate(&p, &mut rho, span, rtol, atol, &mut stats, &mut ws, config.max_steps)?
                        }
                        Method::Rk4 { dt } => rk4_integrate(&p, &mut rho, span, dt, &mut stats)?,
                        Method::KrylovExpm { tol, dim } => {
                            krylov_integrate(&p, &mut rho, span, tol, dim, &mut stats, config.max_steps, &mut krylov_tau)?
                        }
                    }
                    t = target;
                    if (t - next_record).abs() <= eps {
                        push_record(&rho, t, &mut stats, &mut records, &mut states, &mut trace_flagged)?;
                        next_record += schedule.output_dt;
                    }
                }
                t = seg_end;
            }
        }
    }
    if records.last().map(|r| (r.t - t).abs() > eps).unwrap_or(true) {
        push_record(&rho, t, &mut stats, &mut records, &mut states, &mut trace_flagged)?;
    }
    let final_state = QuantumState::from_density_unchecked(rho, layout);
    Ok(Trajectory { records, states, final_state, stats, trace_flagged })
}

// ---------------------------------------------------------------------------
// exact superoperator paths
// ---------------------------------------------------------------------------

/// Dense Liouvillian in the row-major vectorization, where
/// vec(A rho B) = (A (x) B^T) vec(rho).
pub fn liouvillian_matrix(h: &Operator, terms: &[LindbladTerm]) -> Result<Array2<C64>> {
    let scale = 1.0 + h.max_abs();
    h.assert_hermitian(1e-10 * scale)?;
    let n = h.dim();
    let eye = Array2::<C64>::eye(n);
    let hm = hermitize(h.matrix());
    let mut l = kron(&hm, &eye);
    let ht = hm.t().to_owned();
    l -= &kron(&eye, &ht);
    let mut l = l.mapv(|x| -I * x);
    for t in terms {
        if t.rate < 0.0 || !t.rate.is_finite() {
            return Err(Error::InvalidArgument("Lindblad rate must be finite and >= 0".into()));
        }
        let lm = t.collapse.matrix();
        let lc = lm.mapv(|x| x.conj());
        let ldl = adjoint(lm).dot(lm);
        let ldl_t = ldl.t().to_owned();
        let jump = kron(lm, &lc);
        let a1 = kron(&ldl, &eye);
        let a2 = kron(&eye, &ldl_t);
        let g = C64::new(t.rate, 0.0);
        ndarray::Zip::from(&mut l)
            .and(&jump)
            .and(&a1)
            .and(&a2)
            .for_each(|o, &j, &x, &y| *o += g * (j - 0.5 * (x + y)));
    }
    Ok(l)
}

/// Exact propagation of one segment through the exponential of the
/// vectorized Liouvillian. Total dimension is capped at 64 (the
/// superoperator is materialized densely); serves as the cross-check oracle
/// for [`evolve`].
pub fn evolve_expm(state: &QuantumState, segment: &Segment) -> Result<QuantumState> {
    let layout = state.layout();
    if segment.hamiltonian.layout() != layout {
        return Err(Error::LayoutMismatch("state layout differs from segment".into()));
    }
    let n = layout.total_dim();
    if n > 64 {
        return Err(Error::InvalidArgument(format!(
            "evolve_expm materializes an {0}x{0} superoperator; total dimension {n} > 64",
            n * n
        )));
    }
    let l = liouvillian_matrix(&segment.hamiltonian, &segment.lindblad_terms)?;
    let lt = l.mapv(|x| x * C64::new(segment.duration, 0.0));
    let prop = expm(&lt)?;
    let v = Array1::from_iter(state.rho().iter().cloned());
    let out = prop.dot(&v);
    let rho = Array2::from_shape_vec((n, n), out.to_vec()).expect("shape");
    Ok(QuantumState::from_density_unchecked(hermitize(&rho), layout))
}

/// Result metadata for [`steady_state`].
#[derive(Clone, Copy, Debug)]
pub struct SteadyStateInfo {
    pub residual: f64,
    /// Magnitude of the second-smallest Liouvillian eigenvalue.
    pub gap: f64,
    pub degenerate: bool,
}

/// Steady state of the constant generator via the null space of the
/// vectorized Liouvillian (inverse iteration), for total dimension <= 64.
/// Larger systems should use [`steady_state_longtime`].
pub fn steady_state(h: &Operator, terms: &[LindbladTerm]) -> Result<(QuantumState, SteadyStateInfo)> {
    let layout = h.layout();
    let n = layout.total_dim();
    if n > 64 {
        return Err(Error::InvalidArgument(format!(
            "null-space steady state limited to total dimension 64, got {n}; use the long-time path"
        )));
    }
    let l = liouvillian_matrix(h, terms)?;
    let n2 = n * n;
    let scale = frobenius(&l).max(1e-300);
    let shift = 1e-13 * scale;
    let mut shifted = l.clone();
    for i in 0..n2 {
        shifted[(i, i)] -= C64::new(shift, 0.0);
    }
    let lu = ndarray_linalg::Factorize::factorize(&shifted)
        .map_err(|e| Error::Singular(format!("steady-state LU: {e}")))?;
    // start from the trace-full direction vec(I)/n
    let mut v = Array1::<C64>::zeros(n2);
    for i in 0..n {
        v[i * n + i] = C64::new(1.0 / n as f64, 0.0);
    }
    for _ in 0..6 {
        let w = lu
            .solve(&v)
            .map_err(|e| Error::Singular(format!("steady-state solve: {e}")))?;
        let nrm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        v = w.mapv(|x| x / nrm);
    }
    // deflated inverse iteration for the spectral gap
    let mut w = Array1::<C64>::from_shape_fn(n2, |i| {
        let x = ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5;
        let y = ((i * 40503 + 7) % 1000) as f64 / 1000.0 - 0.5;
        C64::new(x, y)
    });
    for _ in 0..8 {
        let proj: C64 = v.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
        ndarray::Zip::from(&mut w).and(&v).for_each(|x, &vv| *x -= proj * vv);
        let s = lu
            .solve(&w)
            .map_err(|e| Error::Singular(format!("steady-state solve: {e}")))?;
        let nrm = s.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        w = s.mapv(|x| x / nrm);
    }
    let proj: C64 = v.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
    ndarray::Zip::from(&mut w).and(&v).for_each(|x, &vv| *x -= proj * vv);
    let wn = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    let lw = l.dot(&w);
    let gap = lw.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt() / wn;
    let degenerate = gap < 1e-12 * scale;

    let rho_raw = Array2::from_shape_vec((n, n), v.to_vec()).expect("shape");
    let rho_h = hermitize(&rho_raw);
    let tr: C64 = rho_h.diag().iter().sum();
    if tr.norm() < 1e-10 {
        return Err(Error::DegenerateSteadyState { gap });
    }
    let rho = rho_h.mapv(|x| x / tr);
    let vec_rho = Array1::from_iter(rho.iter().cloned());
    let resid_v = l.dot(&vec_rho);
    let residual = resid_v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let rho_norm = frobenius(&rho);
    if !degenerate && residual > 1e-10 * scale * rho_norm {
        return Err(Error::Integration(format!(
            "steady-state residual {residual:.3e} exceeds 1e-10 * {scale:.3e}"
        )));
    }
    let state = QuantumState::from_density_unchecked(rho, layout);
    Ok((state, SteadyStateInfo { residual, gap, degenerate }))
}

/// Long-time integration to the steady state: Krylov steps until
/// ||drho/dt|| stays below 1e-10 * ||L|| (relative to the generator
/// magnitude) for a dwell of 10 / min_rate.
pub fn steady_state_longtime(
    h: &Operator,
    terms: &[LindbladTerm],
    initial: &QuantumState,
    max_time: f64,
) -> Result<QuantumState> {
    let p = Prepared::new(h, terms)?;
    let min_rate = terms
        .iter()
        .filter(|t| t.rate > 0.0)
        .map(|t| t.rate)
        .fold(f64::INFINITY, f64::min);
    if !min_rate.is_finite() {
        return Err(Error::InvalidArgument("long-time steady state requires dissipation".into()));
    }
    let dwell = 10.0 / min_rate;
    let chunk = dwell / 10.0;
    let mut rho = hermitize(initial.rho());
    let mut stats = IntegratorStats::default();
    let mut settled = 0.0f64;
    let mut t = 0.0f64;
    let mut tau_hint = 0.0f64;
    let tol_abs = 1e-10 * p.anorm;
    while settled < dwell {
        if t > max_time {
            return Err(Error::Integration(format!(
                "steady state not reached within max_time {max_time}"
            )));
        }
        krylov_integrate(&p, &mut rho, chunk, 1e-10, 40, &mut stats, 10_000_000, &mut tau_hint)?;
        t += chunk;
        let mut dr = Array2::<C64>::zeros((p.dim(), p.dim()));
        p.rhs_hermitian(&rho, &mut dr);
        let resid = frobenius(&dr);
        if resid < tol_abs {
            settled += chunk;
        } else {
            settled = 0.0;
        }
    }
    let tr: C64 = rho.diag().iter().sum();
    let rho = rho.mapv(|x| x / tr);
    Ok(QuantumState::from_density_unchecked(rho, initial.layout()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{collective_op, spin_coherent_state, Axis};
    use crate::space::{Ancilla, SpaceLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PI: f64 = std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_density(n: usize, rng: &mut impl Rng, layout: SpaceLayout) -> QuantumState {
        let mut g = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let rho = g.dot(&adjoint(&g));
        let tr: C64 = rho.diag().iter().sum();
        QuantumState::from_density_unchecked(rho.mapv(|x| x / tr), layout)
    }

    fn random_hermitian_op(layout: SpaceLayout, rng: &mut impl Rng) -> Operator {
        let n = layout.total_dim();
        let mut g = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        Operator::new(hermitize(&g), layout).unwrap()
    }

    #[test]
    fn rhs_zero_generator() {
        let l = SpaceLayout::product(1);
        let h = Operator::zeros(l);
        let s = spin_coherent_state(l, 0.7, 0.2);
        let d = lindblad_rhs(&h, &[], &s).unwrap();
        assert!(frobenius(&d) < 1e-15);
    }

    #[test]
    fn rhs_amplitude_damping() {
        // H=0, single channel (gamma, sigma_minus), rho = |up><up|
        let l = SpaceLayout::product(1);
        let h = Operator::zeros(l);
        let sm = crate::operators::local_pauli(l, 1, Axis::Minus).unwrap();
        let term = LindbladTerm::new(0.37, sm).unwrap();
        let psi = array![c(0., 0.), c(1., 0.)];
        let up = QuantumState::from_pure(&psi, l).unwrap();
        let d = lindblad_rhs(&h, &[term], &up).unwrap();
        // drho/dt = gamma(|down><down| - |up><up|)
        assert!((d[(0, 0)] - c(0.37, 0.)).norm() < 1e-14);
        assert!((d[(1, 1)] + c(0.37, 0.)).norm() < 1e-14);
        assert!(d[(0, 1)].norm() < 1e-15);
        // trace of RHS vanishes
        let tr: C64 = d.diag().iter().sum();
        assert!(tr.norm() < 1e-14);
    }

    #[test]
    fn rhs_unitary_preserves_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = SpaceLayout::product(2);
        let h = random_hermitian_op(l, &mut rng);
        let s = random_density(4, &mut rng, l);
        let d = lindblad_rhs(&h, &[], &s).unwrap();
        // d/dt tr(rho^2) = 2 tr(rho drho/dt) = 0 under unitary dynamics
        let mut acc = c(0., 0.);
        for i in 0..4 {
            for j in 0..4 {
                acc += s.rho()[(i, j)] * d[(j, i)];
            }
        }
        assert!(acc.norm() < 1e-12);
        // trace of RHS vanishes even with dissipation
        let sm = crate::operators::local_pauli(l, 1, Axis::Minus).unwrap();
        let d2 = lindblad_rhs(&h, &[LindbladTerm::new(0.5, sm).unwrap()], &s).unwrap();
        let tr: C64 = d2.diag().iter().sum();
        assert!(tr.norm() < 1e-12 * frobenius(s.rho()));
    }

    #[test]
    fn rhs_rejects_non_hermitian() {
        let l = SpaceLayout::product(1);
        let m = array![[c(0., 0.), c(1., 0.)], [c(0., 0.), c(0., 0.)]];
        let h = Operator::new(m, l).unwrap();
        let s = spin_coherent_state(l, 0.3, 0.0);
        assert!(lindblad_rhs(&h, &[], &s).is_err());
    }

    #[test]
    fn fast_dissipator_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for anc in [Ancilla::Qubit, Ancilla::Boson(4)] {
            let l = SpaceLayout::dicke(2).with_ancilla(anc);
            let n = l.total_dim();
            let a = ancilla_lowering(l).unwrap();
            let h = Operator::zeros(l);
            let term = LindbladTerm::new(0.83, a.clone()).unwrap();
            let p = Prepared::new(&h, &[term]).unwrap();
            assert!(p.terms[0].fast.is_some(), "fast path not detected");
            let s = random_density(n, &mut rng, l);
            let mut out_fast = Array2::<C64>::zeros((n, n));
            p.rhs_general(s.rho(), &mut out_fast);
            // dense reference
            let lm = a.matrix();
            let ldl = adjoint(lm).dot(lm);
            let dense = lm.dot(s.rho()).dot(&adjoint(lm))
                - (ldl.dot(s.rho()) + s.rho().dot(&ldl)).mapv(|x| x * 0.5);
            let dense = dense.mapv(|x| x * 0.83);
            assert!(crate::linalg::max_abs_diff(&out_fast, &dense) < 1e-13);
        }
    }

    #[test]
    fn rabi_half_period() {
        // H = Omega Jx, |0,0>, duration pi/Omega -> all spins up
        let l = SpaceLayout::dicke(4);
        let omega = 2.0;
        let h = collective_op(l, Axis::X).scale_re(omega);
        let s0 = spin_coherent_state(l, 0.0, 0.0);
        let mut sched = Schedule::new(PI / omega / 8.0);
        sched.push_segment(Segment::new(h, vec![], PI / omega).unwrap());
        let traj = evolve(&s0, &sched, &IntegratorConfig::default()).unwrap();
        let up = spin_coherent_state(l, PI, 0.0);
        let fid = analysis::trace_distance(&traj.final_state, &up);
        assert!(fid < 1e-7, "trace distance {fid}");
        assert!(!traj.trace_flagged);
        assert!(traj.stats.max_hermitization_correction < 1e-9);
    }

    #[test]
    fn segmentation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let l = SpaceLayout::product(2).with_ancilla(Ancilla::Qubit);
        let h = random_hermitian_op(l, &mut rng);
        let a = ancilla_lowering(l).unwrap();
        let terms = vec![LindbladTerm::new(0.3, a).unwrap()];
        let s0 = spin_coherent_state(l, PI / 2.0, 0.0);

        let mut one = Schedule::new(0.5);
        one.push_segment(Segment::new(h.clone(), terms.clone(), 2.0).unwrap());
        let t1 = evolve(&s0, &one, &IntegratorConfig::default()).unwrap();

        let mut two = Schedule::new(0.5);
        two.push_segment(Segment::new(h.clone(), terms.clone(), 1.0).unwrap());
        two.push_unitary(Operator::identity(l));
        two.push_segment(Segment::new(h, terms, 1.0).unwrap());
        let t2 = evolve(&s0, &two, &IntegratorConfig::default()).unwrap();

        let d = analysis::trace_distance(&t1.final_state, &t2.final_state);
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn expm_oracle_agreement() {
        // random 2-spin + qubit ancilla model over a moderate span
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let l = SpaceLayout::product(2).with_ancilla(Ancilla::Qubit);
        let h = random_hermitian_op(l, &mut rng);
        let a = ancilla_lowering(l).unwrap();
        let terms = vec![LindbladTerm::new(0.21, a).unwrap()];
        let s0 = spin_coherent_state(l, 1.1, 0.4);
        let seg = Segment::new(h.clone(), terms.clone(), 10.0).unwrap();
        let exact = evolve_expm(&s0, &seg).unwrap();

        for (label, cfg) in [
            ("dopri", IntegratorConfig::default()),
            ("krylov", IntegratorConfig::krylov()),
            (
                "rk4",
                IntegratorConfig { method: Method::Rk4 { dt: 1e-3 }, ..Default::default() },
            ),
        ] {
            let mut sched = Schedule::new(2.5);
            sched.push_segment(seg.clone());
            let traj = evolve(&s0, &sched, &cfg).unwrap();
            let d = analysis::trace_distance(&traj.final_state, &exact);
            assert!(d < 1e-7, "{label}: trace distance {d}");
        }
    }

    #[test]
    fn expm_zero_generator_and_decay() {
        let l = SpaceLayout::product(1);
        let s0 = spin_coherent_state(l, 2.0, 0.3);
        let seg = Segment::new(Operator::zeros(l), vec![], 3.0).unwrap();
        let out = evolve_expm(&s0, &seg).unwrap();
        assert!(crate::linalg::max_abs_diff(out.rho(), s0.rho()) < 1e-13);

        // pure decay: rho_upup(t) = e^{-gamma t} rho_upup(0)
        let gamma = 0.8;
        let t = 1.7;
        let sm = crate::operators::local_pauli(l, 1, Axis::Minus).unwrap();
        let seg = Segment::new(Operator::zeros(l), vec![LindbladTerm::new(gamma, sm).unwrap()], t).unwrap();
        let s0 = spin_coherent_state(l, PI / 2.0, 0.0);
        let out = evolve_expm(&s0, &seg).unwrap();
        let want = 0.5 * (-gamma * t).exp();
        assert!((out.rho()[(1, 1)].re - want).abs() < 1e-12);
        // coherence decays at gamma/2
        let wantc = 0.5 * (-gamma * t / 2.0).exp();
        assert!((out.rho()[(0, 1)].norm() - wantc).abs() < 1e-12);
    }

    #[test]
    fn steady_state_pure_damping() {
        let l = SpaceLayout::product(1).with_ancilla(Ancilla::None);
        let sm = crate::operators::local_pauli(l, 1, Axis::Minus).unwrap();
        let (ss, info) = steady_state(&Operator::zeros(l), &[LindbladTerm::new(1.0, sm).unwrap()]).unwrap();
        assert!((ss.rho()[(0, 0)].re - 1.0).abs() < 1e-10);
        assert!(ss.rho()[(1, 1)].norm() < 1e-10);
        assert!(!info.degenerate);
        assert!(info.gap > 0.1);
    }

    #[test]
    fn steady_state_dcr_small() {
        // driven collective relaxation, N=6, Omega_x=0, 2 Omega_y/(gamma N) = 0.85
        let n = 6;
        let l = SpaceLayout::dicke(n);
        let gamma = 1.0;
        let oy = 0.85 * gamma * n as f64 / 2.0;
        let h = collective_op(l, Axis::Y).scale_re(oy);
        let jm = collective_op(l, Axis::Minus);
        let terms = vec![LindbladTerm::new(gamma, jm).unwrap()];
        let (ss, info) = steady_state(&h, &terms).unwrap();
        assert!(!info.degenerate);
        let rep = analysis::wineland_xi2(&ss);
        assert!(rep.xi2 < 1.0, "steady xi2 = {}", rep.xi2);

        // long-time path agrees in trace distance
        let init = spin_coherent_state(l, 0.0, 0.0);
        let lt = steady_state_longtime(&h, &terms, &init, 1e4).unwrap();
        let d = analysis::trace_distance(&ss, &lt);
        assert!(d < 1e-6, "methods differ by {d}");
    }

    #[test]
    fn contractivity_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let l = SpaceLayout::product(2);
        let h = random_hermitian_op(l, &mut rng);
        let sm = crate::operators::local_pauli(l, 1, Axis::Minus).unwrap();
        let terms = vec![LindbladTerm::new(0.4, sm).unwrap()];
        let a0 = random_density(4, &mut rng, l);
        let b0 = random_density(4, &mut rng, l);
        let mut sched = Schedule::new(0.25);
        sched.push_segment(Segment::new(h, terms, 3.0).unwrap());
        let cfg = IntegratorConfig { store_states: true, ..Default::default() };
        let ta = evolve(&a0, &sched, &cfg).unwrap();
        let tb = evolve(&b0, &sched, &cfg).unwrap();
        let sa = ta.states.unwrap();
        let sb = tb.states.unwrap();
        let mut prev = f64::INFINITY;
        for (x, y) in sa.iter().zip(sb.iter()) {
            let d = analysis::trace_distance(x, y);
            assert!(d <= prev + 1e-8, "trace distance increased: {d} > {prev}");
            prev = d;
        }
    }

    #[test]
    fn truncation_guard_fires() {
        // drive the boson ancilla resonantly so population climbs past the guard
        let l = SpaceLayout::dicke(1).with_ancilla(Ancilla::Boson(3));
        let a = ancilla_lowering(l).unwrap();
        let h = &a + &a.adjoint(); // displacement drive
        let s0 = spin_coherent_state(l, 0.0, 0.0);
        let mut sched = Schedule::new(0.5);
        sched.push_segment(Segment::new(h.scale_re(2.0), vec![], 2.0).unwrap());
        let err = evolve(&s0, &sched, &IntegratorConfig::default()).unwrap_err();
        match err {
            Error::TruncationGuard { .. } => {}
            other => panic!("expected truncation guard, got {other}"),
        }
    }

    #[test]
    fn krylov_matches_dopri_with_pulses() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let l = SpaceLayout::dicke(3).with_ancilla(Ancilla::Qubit);
        let h = random_hermitian_op(l, &mut rng).scale_re(3.0);
        let a = ancilla_lowering(l).unwrap();
        let terms = vec![LindbladTerm::new(0.6, a).unwrap()];
        let u = crate::operators::rotation_operator(l, PI, 0.3);
        let s0 = spin_coherent_state(l, PI / 2.0, 0.0);
        let build = || {
            let mut sched = Schedule::new(0.5);
            sched.push_segment(Segment::new(h.clone(), terms.clone(), 2.0).unwrap());
            sched.push_unitary(u.clone());
            sched.push_segment(Segment::new(h.clone(), terms.clone(), 2.0).unwrap());
            sched
        };
        let td = evolve(&s0, &build(), &IntegratorConfig::default()).unwrap();
        let tk = evolve(&s0, &build(), &IntegratorConfig::krylov()).unwrap();
        let d = analysis::trace_distance(&td.final_state, &tk.final_state);
        assert!(d < 1e-7, "krylov vs dopri: {d}");
        assert_eq!(td.records.len(), tk.records.len());
    }
}
