//! Propagation geometry of a single multipath component seen from two nodes.
//!
//! An MPC reaching nodes A and B from the same observer behaves as if it were
//! emitted by a virtual source (a mirror image of the observer, or a
//! scatterer). The triangle formed by A, B and that virtual source ties the
//! two delays and two directions of the MPC to the relative position
//! `d = pos_b - pos_a`:
//!
//! * `d = c·tau_b·dir_b − c·tau_a·dir_a` (vector identity),
//! * `(dir_a + dir_b)ᵀd = c·(tau_b − tau_a)·(1 + dir_aᵀdir_b)` (projection identity),
//! * `|c·(tau_b − tau_a)| ≤ ‖d‖` (delay-difference bound).
//!
//! Directions point from the virtual source toward the receiving node.

use nalgebra::{Unit, Vector3};

use crate::error::{Error, Result};

/// Position or displacement in meters.
pub type Vec3 = Vector3<f64>;

/// Unit-norm propagation direction.
pub type Direction = Unit<Vector3<f64>>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Path vectors shorter than this are treated as a virtual source sitting on a node.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// True parameters of one MPC as seen by nodes A and B at one observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcTrue {
    /// Delay between node A and the observer, seconds.
    pub tau_a: f64,
    /// Delay between node B and the observer, seconds.
    pub tau_b: f64,
    pub dir_a: Direction,
    pub dir_b: Direction,
    pub observer: usize,
    pub mpc: usize,
}

impl MpcTrue {
    /// True delay difference `tau_b − tau_a`.
    pub fn delay_diff(&self) -> f64 {
        self.tau_b - self.tau_a
    }

    /// Relative position implied by this MPC alone.
    pub fn implied_displacement(&self, c: f64) -> Vec3 {
        c * self.tau_b * self.dir_b.into_inner() - c * self.tau_a * self.dir_a.into_inner()
    }

    /// The same path seen with the roles of A and B exchanged.
    pub fn swapped(&self) -> MpcTrue {
        MpcTrue { tau_a: self.tau_b, tau_b: self.tau_a, dir_a: self.dir_b, dir_b: self.dir_a, ..*self }
    }
}

/// Ground-truth geometry: two nodes and the MPCs observed at each observer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pos_a: Vec3,
    pub pos_b: Vec3,
    /// MPCs grouped by observer; `mpcs[o].len()` is `K_o`.
    pub mpcs: Vec<Vec<MpcTrue>>,
    /// Propagation speed, m/s.
    pub c: f64,
}

impl Scenario {
    pub fn displacement(&self) -> Vec3 {
        self.pos_b - self.pos_a
    }

    pub fn distance(&self) -> f64 {
        self.displacement().norm()
    }

    pub fn observer_count(&self) -> usize {
        self.mpcs.len()
    }

    /// Total MPC count `K`.
    pub fn mpc_count(&self) -> usize {
        self.mpcs.iter().map(Vec::len).sum()
    }

    pub fn iter_mpcs(&self) -> impl Iterator<Item = &MpcTrue> {
        self.mpcs.iter().flatten()
    }

    /// Largest violation of the three geometric identities over all MPCs, in meters.
    pub fn max_identity_violation(&self) -> f64 {
        let d = self.displacement();
        self.iter_mpcs()
            .map(|m| {
                let bound = (self.c * m.delay_diff()).abs() - d.norm();
                let vector = vector_residual(m, &d, self.c).norm();
                let proj = projection_residual(m, &d, self.c).abs();
                bound.max(0.0).max(vector).max(proj)
            })
            .fold(0.0, f64::max)
    }
}

/// Normalizes `v`, failing when it is shorter than [`DEGENERACY_THRESHOLD`].
pub fn direction(v: Vec3) -> Result<Direction> {
    let norm = v.norm();
    if !(norm >= DEGENERACY_THRESHOLD) {
        return Err(Error::DegenerateGeometry { norm });
    }
    Ok(Unit::new_unchecked(v / norm))
}

/// Completes an MPC from its A-side parameters and the node positions.
///
/// The virtual source sits at `pos_a − c·tau_a·dir_a`; the B-side path vector
/// is therefore `d + c·tau_a·dir_a`.
pub fn complete_mpc(pos_a: &Vec3, pos_b: &Vec3, tau_a: f64, dir_a: Direction, c: f64) -> Result<MpcTrue> {
    if !(tau_a > 0.0) {
        return Err(Error::InvalidParams(format!("tau_a must be positive, got {tau_a}")));
    }
    let path_b = (pos_b - pos_a) + c * tau_a * dir_a.into_inner();
    let norm = path_b.norm();
    let dir_b = direction(path_b)?;
    Ok(MpcTrue { tau_a, tau_b: norm / c, dir_a, dir_b, observer: 0, mpc: 0 })
}

/// Builds an MPC from an explicit virtual-source position.
pub fn mpc_from_virtual_source(pos_a: &Vec3, pos_b: &Vec3, source: &Vec3, c: f64) -> Result<MpcTrue> {
    let path_a = pos_a - source;
    let dir_a = direction(path_a)?;
    complete_mpc(pos_a, pos_b, path_a.norm() / c, dir_a, c)
}

/// `tau_b − tau_a` of an MPC.
pub fn delay_diff_true(m: &MpcTrue) -> f64 {
    m.delay_diff()
}

/// `c·tau_b·dir_b − c·tau_a·dir_a − d`; zero for consistent geometry.
pub fn vector_residual(m: &MpcTrue, d: &Vec3, c: f64) -> Vec3 {
    m.implied_displacement(c) - d
}

/// `(dir_a + dir_b)ᵀd − c·Δ̃·(1 + dir_aᵀdir_b)`, in meters.
pub fn projection_residual(m: &MpcTrue, d: &Vec3, c: f64) -> f64 {
    let sum = m.dir_a.into_inner() + m.dir_b.into_inner();
    sum.dot(d) - c * m.delay_diff() * (1.0 + m.dir_a.dot(&m.dir_b))
}

/// Plane-wave residual `dir_aᵀd − c·Δ̃`, in meters.
///
/// Small when `‖d‖ ≪ c·tau_a`, but not zero in general.
pub fn pwa_residual(m: &MpcTrue, d: &Vec3, c: f64) -> f64 {
    m.dir_a.dot(d) - c * m.delay_diff()
}

/// Projection vector `(dir_a + dir_b) / (1 + dir_aᵀdir_b)` satisfying `sᵀd = c·Δ̃`.
///
/// Returns `None` when `1 + dir_aᵀdir_b` is not above `guard`.
pub fn projection_vector(dir_a: &Direction, dir_b: &Direction, guard: f64) -> Option<Vec3> {
    let denom = 1.0 + dir_a.dot(dir_b);
    (denom > guard).then(|| (dir_a.into_inner() + dir_b.into_inner()) / denom)
}
