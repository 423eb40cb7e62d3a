//! Biot-Savart coupling maps for the superconducting device geometries.
//!
//! Wires are piecewise-straight segments with a rectangular cross-section,
//! subdivided into uniform filaments; the field of each filament uses the
//! exact finite straight-wire expression
//!
//! ```text
//! B = (mu0 I / 4 pi) (r1 x r2)(|r1| + |r2|) / (|r1||r2|(|r1||r2| + r1.r2))
//! ```
//!
//! which is regular everywhere off the filament. Couplings follow the device
//! conversion formulas: lambda = g_e mu_B |B| / (sqrt(2) hbar) for the flux
//! qubit and lambda = g_e mu_B |B| / (2 hbar) for the microwave resonator
//! evaluated at the zero-point current I0 = sqrt(hbar omega / (2 L)).

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::{Error, Result};

pub const MU_0: f64 = 1.256_637_062_12e-6;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const MU_B: f64 = 9.274_010_078_3e-24;
pub const G_E: f64 = 2.0023;

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Straight wire segment with a rectangular cross-section subdivided into
/// n_width x n_height filaments, each carrying current / (n_width n_height).
#[derive(Clone, Debug)]
pub struct WireSegment {
    pub start: Vec3,
    pub end: Vec3,
    /// Total current (amperes), positive along end - start.
    pub current: f64,
    pub width: f64,
    pub height: f64,
    pub n_width: usize,
    pub n_height: usize,
    /// Unit vector of the width direction of the cross-section.
    pub u_width: Vec3,
    /// Unit vector of the height direction of the cross-section.
    pub u_height: Vec3,
}

impl WireSegment {
    /// Thin (single-filament) segment.
    pub fn thin(start: Vec3, end: Vec3, current: f64) -> Result<Self> {
        if norm(sub(end, start)) == 0.0 {
            return Err(Error::InvalidArgument("zero-length wire segment".into()));
        }
        Ok(WireSegment {
            start,
            end,
            current,
            width: 0.0,
            height: 0.0,
            n_width: 1,
            n_height: 1,
            u_width: [0.0, 0.0, 1.0],
            u_height: [1.0, 0.0, 0.0],
        })
    }

    pub fn with_cross_section(
        mut self,
        width: f64,
        height: f64,
        n_width: usize,
        n_height: usize,
        u_width: Vec3,
        u_height: Vec3,
    ) -> Result<Self> {
        if n_width == 0 || n_height == 0 {
            return Err(Error::InvalidArgument("filament counts must be >= 1".into()));
        }
        self.width = width;
        self.height = height;
        self.n_width = n_width;
        self.n_height = n_height;
        self.u_width = u_width;
        self.u_height = u_height;
        Ok(self)
    }
}

fn filament_field(start: Vec3, end: Vec3, current: f64, point: Vec3) -> Result<Vec3> {
    let r1 = sub(point, start);
    let r2 = sub(point, end);
    let n1 = norm(r1);
    let n2 = norm(r2);
    let denom = n1 * n2 * (n1 * n2 + dot(r1, r2));
    // distance from the segment for the singularity guard
    let axis = sub(end, start);
    let len = norm(axis);
    let t = (dot(r1, axis) / (len * len)).clamp(0.0, 1.0);
    let closest = add(start, scale(axis, t));
    if norm(sub(point, closest)) < 1e-12 {
        return Err(Error::Singular("field point lies on a filament".into()));
    }
    let num = cross(r1, r2);
    let pref = MU_0 * current / (4.0 * std::f64::consts::PI) * (n1 + n2) / denom;
    Ok(scale(num, pref))
}

/// Magnetic field (tesla) of a set of wire segments at a point.
pub fn field_at(segments: &[WireSegment], point: Vec3) -> Result<Vec3> {
    let mut b = [0.0; 3];
    for seg in segments {
        let nf = (seg.n_width * seg.n_height) as f64;
        let i_fil = seg.current / nf;
        for iw in 0..seg.n_width {
            for ih in 0..seg.n_height {
                let ow = if seg.n_width > 1 {
                    seg.width * ((iw as f64 + 0.5) / seg.n_width as f64 - 0.5)
                } else {
                    0.0
                };
                let oh = if seg.n_height > 1 {
                    seg.height * ((ih as f64 + 0.5) / seg.n_height as f64 - 0.5)
                } else {
                    0.0
                };
                let off = add(scale(seg.u_width, ow), scale(seg.u_height, oh));
                let s = add(seg.start, off);
                let e = add(seg.end, off);
                let bf = filament_field(s, e, i_fil, point)?;
                b = add(b, bf);
            }
        }
    }
    Ok(b)
}

// ---------------------------------------------------------------------------
// device geometries
// ---------------------------------------------------------------------------

/// Square flux-qubit loop in the y-z plane, centered on the origin.
#[derive(Clone, Copy, Debug)]
pub struct FluxQubitGeometry {
    /// Side length of the (centerline) square loop.
    pub side: f64,
    /// In-plane wire thickness.
    pub wire_width: f64,
    /// Out-of-plane wire height (x direction).
    pub wire_height: f64,
    /// Persistent current.
    pub current: f64,
}

impl Default for FluxQubitGeometry {
    fn default() -> Self {
        FluxQubitGeometry {
            side: 3e-6,
            wire_width: 0.1e-6,
            wire_height: 0.2e-6,
            current: 1.4e-6,
        }
    }
}

/// The four sides of the loop with consistent circulation (field along +x
/// in the interior), subdivided into filaments.
pub fn fq_loop_segments(g: &FluxQubitGeometry, n_width: usize, n_height: usize) -> Vec<WireSegment> {
    let a = g.side / 2.0;
    let x_hat = [1.0, 0.0, 0.0];
    let corners = [
        ([0.0, -a, -a], [0.0, a, -a], [0.0, 0.0, 1.0]), // along +y at z=-a, width dir z
        ([0.0, a, -a], [0.0, a, a], [0.0, 1.0, 0.0]),   // along +z at y=+a, width dir y
        ([0.0, a, a], [0.0, -a, a], [0.0, 0.0, 1.0]),   // along -y at z=+a
        ([0.0, -a, a], [0.0, -a, -a], [0.0, 1.0, 0.0]), // along -z at y=-a
    ];
    corners
        .iter()
        .map(|&(s, e, uw)| {
            WireSegment::thin(s, e, g.current)
                .and_then(|w| w.with_cross_section(g.wire_width, g.wire_height, n_width, n_height, uw, x_hat))
                .expect("loop segment")
        })
        .collect()
}

/// Coupling of a spin at `point` to the flux qubit:
/// lambda = g_e mu_B |B| / (sqrt(2) hbar).
pub fn fq_coupling(point: Vec3, g: &FluxQubitGeometry, n_width: usize, n_height: usize) -> Result<f64> {
    let segs = fq_loop_segments(g, n_width, n_height);
    let b = field_at(&segs, point)?;
    Ok(G_E * MU_B * norm(b) / (2f64.sqrt() * HBAR))
}

/// Straight resonator inductor wire along y centered on the origin, bottom
/// face at x = 0.
#[derive(Clone, Copy, Debug)]
pub struct ResonatorGeometry {
    pub length: f64,
    /// Width in z.
    pub width: f64,
    /// Height in x.
    pub height: f64,
    pub inductance: f64,
    /// Resonator angular frequency (rad/s).
    pub frequency: f64,
}

impl Default for ResonatorGeometry {
    fn default() -> Self {
        ResonatorGeometry {
            length: 1.5e-3,
            width: 2e-6,
            height: 50e-9,
            inductance: 1.5e-9,
            frequency: std::f64::consts::TAU * 3e9,
        }
    }
}

/// Vacuum-fluctuation (zero-point) current of the lumped-element resonator,
/// I0 = sqrt(hbar omega / (2 L)).
pub fn mr_zero_point_current(g: &ResonatorGeometry) -> f64 {
    (HBAR * g.frequency / (2.0 * g.inductance)).sqrt()
}

pub fn mr_wire_segments(g: &ResonatorGeometry, n_width: usize, n_height: usize) -> Vec<WireSegment> {
    let half = g.length / 2.0;
    let i0 = mr_zero_point_current(g);
    let seg = WireSegment::thin([g.height / 2.0, -half, 0.0], [g.height / 2.0, half, 0.0], i0)
        .and_then(|w| {
            w.with_cross_section(g.width, g.height, n_width, n_height, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
        })
        .expect("resonator wire");
    vec![seg]
}

/// Coupling of a donor spin at `point` to the resonator:
/// lambda = g_e mu_B |B(I0)| / (2 hbar).
pub fn mr_coupling(point: Vec3, g: &ResonatorGeometry, n_width: usize, n_height: usize) -> Result<f64> {
    let segs = mr_wire_segments(g, n_width, n_height);
    let b = field_at(&segs, point)?;
    Ok(G_E * MU_B * norm(b) / (2.0 * HBAR))
}

// ---------------------------------------------------------------------------
// spin placement and statistics
// ---------------------------------------------------------------------------

/// Axis-aligned sample volume with a spin number density (spins / m^3).
#[derive(Clone, Copy, Debug)]
pub struct SampleBox {
    pub origin: Vec3,
    pub extents: Vec3,
    pub density: f64,
}

impl SampleBox {
    pub fn new(origin: Vec3, extents: Vec3, density: f64) -> Result<Self> {
        if extents.iter().any(|&e| e <= 0.0) || density <= 0.0 {
            return Err(Error::InvalidArgument("extents and density must be positive".into()));
        }
        Ok(SampleBox { origin, extents, density })
    }

    pub fn volume(&self) -> f64 {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    pub fn mean_count(&self) -> f64 {
        self.volume() * self.density
    }

    /// Diamond sample inside the flux qubit: 1.58 x 1.58 x 0.2 um^3 at
    /// density 1e15 / cm^3 (about 500 NV centres), centered in the loop.
    pub fn fq_diamond() -> Self {
        SampleBox {
            origin: [-0.1e-6, -0.79e-6, -0.79e-6],
            extents: [0.2e-6, 1.58e-6, 1.58e-6],
            density: 1e21,
        }
    }

    /// Silicon sample above the resonator wire: 1 mm x 2 um x 50 nm at
    /// density 1.2e14 / cm^3 (about 1.2e4 donors), 100 nm above the wire.
    pub fn mr_silicon() -> Self {
        SampleBox {
            origin: [150e-9, -0.5e-3, -1e-6],
            extents: [50e-9, 1e-3, 2e-6],
            density: 1.2e20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountMode {
    /// Poisson-distributed count with mean density * volume.
    Poisson,
    /// Exactly this many spins.
    Exact(usize),
}

/// Uniform random positions inside the box.
pub fn sample_spins(sample: &SampleBox, mode: CountMode, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
    let count = match mode {
        CountMode::Exact(n) => n,
        CountMode::Poisson => {
            let dist = Poisson::new(sample.mean_count())
                .map_err(|e| Error::InvalidArgument(format!("Poisson mean: {e}")))?;
            dist.sample(rng) as usize
        }
    };
    Ok((0..count)
        .map(|_| {
            [
                sample.origin[0] + rng.gen::<f64>() * sample.extents[0],
                sample.origin[1] + rng.gen::<f64>() * sample.extents[1],
                sample.origin[2] + rng.gen::<f64>() * sample.extents[2],
            ]
        })
        .collect())
}

/// Sample mean, standard deviation and a binned histogram of couplings.
#[derive(Clone, Debug)]
pub struct CouplingStats {
    pub lambda_bar: f64,
    pub delta_lambda: f64,
    /// (bin center, count) pairs.
    pub histogram: Vec<(f64, usize)>,
}

pub fn coupling_stats(
    positions: &[Vec3],
    coupling: impl Fn(Vec3) -> Result<f64>,
    bins: usize,
) -> Result<CouplingStats> {
    if positions.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 positions".into()));
    }
    let lambdas: Result<Vec<f64>> = positions.iter().map(|&p| coupling(p)).collect();
    let lambdas = lambdas?;
    let n = lambdas.len() as f64;
    let mean = lambdas.iter().sum::<f64>() / n;
    let var = lambdas.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let (lo, hi) = lambdas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = (hi - lo).max(1e-300);
    let mut counts = vec![0usize; bins.max(1)];
    for &l in &lambdas {
        let k = (((l - lo) / span) * bins as f64).min(bins as f64 - 1.0) as usize;
        counts[k] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + span * (k as f64 + 0.5) / bins as f64, c))
        .collect();
    Ok(CouplingStats { lambda_bar: mean, delta_lambda: var.sqrt(), histogram })
}
