//! Hilbert-space layouts: spin representation and ancilla factor.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the N-spin ensemble is represented.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Representation {
    /// Permutation-symmetric j = N/2 sector, dimension N + 1.
    DickeSymmetric,
    /// Full tensor product of N spin-1/2 sites, dimension 2^N.
    FullProduct,
}

/// Ancillary system attached to the spin ensemble.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Ancilla {
    /// No ancilla factor.
    None,
    /// Two-level system (flux qubit).
    Qubit,
    /// Bosonic mode truncated to `d` levels (microwave resonator), d >= 2.
    Boson(usize),
}

impl Ancilla {
    pub fn dim(&self) -> usize {
        match *self {
            Ancilla::None => 1,
            Ancilla::Qubit => 2,
            Ancilla::Boson(d) => d,
        }
    }
}

/// Tensor layout of the total Hilbert space: spin factor times ancilla factor.
///
/// The spin factor comes first; basis index = spin_index * ancilla_dim +
/// ancilla_index. Spin basis ordering: single-spin |down> = 0, |up> = 1 (the
/// -1/+1 eigenstates of sigma_z); Dicke basis ordered by increasing m.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SpaceLayout {
    pub representation: Representation,
    pub n_spins: usize,
    pub ancilla: Ancilla,
}

impl SpaceLayout {
    pub fn new(representation: Representation, n_spins: usize, ancilla: Ancilla) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidArgument("n_spins must be positive".into()));
        }
        if let Ancilla::Boson(d) = ancilla {
            if d < 2 {
                return Err(Error::InvalidArgument(format!(
                    "boson truncation d_trunc = {d} must be >= 2"
                )));
            }
        }
        if representation == Representation::FullProduct && n_spins > 20 {
            return Err(Error::InvalidArgument(format!(
                "full product space for N = {n_spins} spins is too large"
            )));
        }
        Ok(SpaceLayout { representation, n_spins, ancilla })
    }

    /// Dicke-symmetric layout without ancilla.
    pub fn dicke(n_spins: usize) -> Self {
        SpaceLayout::new(Representation::DickeSymmetric, n_spins, Ancilla::None).unwrap()
    }

    /// Full product layout without ancilla.
    pub fn product(n_spins: usize) -> Self {
        SpaceLayout::new(Representation::FullProduct, n_spins, Ancilla::None).unwrap()
    }

    /// Same layout with the given ancilla attached.
    pub fn with_ancilla(mut self, ancilla: Ancilla) -> Self {
        if let Ancilla::Boson(d) = ancilla {
            assert!(d >= 2, "boson truncation must be >= 2");
        }
        self.ancilla = ancilla;
        self
    }

    pub fn spin_dim(&self) -> usize {
        match self.representation {
            Representation::DickeSymmetric => self.n_spins + 1,
            Representation::FullProduct => 1 << self.n_spins,
        }
    }

    pub fn ancilla_dim(&self) -> usize {
        self.ancilla.dim()
    }

    pub fn total_dim(&self) -> usize {
        self.spin_dim() * self.ancilla_dim()
    }

    /// Spin-only layout with the ancilla removed.
    pub fn without_ancilla(&self) -> SpaceLayout {
        SpaceLayout { ancilla: Ancilla::None, ..*self }
    }

    pub fn has_ancilla(&self) -> bool {
        self.ancilla != Ancilla::None
    }
}
