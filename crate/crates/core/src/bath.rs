//! Stochastic nuclear-spin baths around a defect, and CCE cluster enumeration.
//!
//! The defect electron spin sits at the origin of every bath. Lattice baths are
//! built by periodic replication of a [`CrystalCell`] and independent
//! natural-abundance isotope assignment per site; random baths place a Poisson
//! number of nuclei uniformly in a ball (the amorphous limit).

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::isotopes::{Isotope, IsotopeError, IsotopeTable};

pub type Vec3 = Vector3<f64>;

/// Default bath radius (Å) for natural-abundance hosts.
pub const DEFAULT_BATH_RADIUS: f64 = 35.0;
/// Default pair cutoff (Å) for CCE-2 clusters.
pub const DEFAULT_PAIR_CUTOFF: f64 = 10.0;
/// Spin density (cm⁻³) at which the default radii were converged: ¹³C in natural diamond.
pub const REFERENCE_SPIN_DENSITY: f64 = 1.9e21;

const CM_PER_ANGSTROM: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BathError {
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Isotope(#[from] IsotopeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalSite {
    pub element: String,
    /// Fractional coordinates wrapped into [0, 1).
    pub frac: [f64; 3],
    /// Site occupancy in (0, 1].
    pub occupancy: f64,
}

/// A periodic structure: lattice vectors as rows (Å) plus the sites of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalCell {
    lattice: Matrix3<f64>,
    sites: Vec<CrystalSite>,
}

pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl CrystalCell {
    pub fn new(lattice: [[f64; 3]; 3], sites: Vec<CrystalSite>) -> Result<Self, BathError> {
        let lattice = Matrix3::from_row_slice(&lattice.concat());
        let volume = lattice.determinant().abs();
        if !(volume > 1e-9) || !volume.is_finite() {
            return Err(BathError::Domain(format!(
                "degenerate cell: lattice vectors span volume {volume:.3e} Å³"
            )));
        }
        let mut wrapped = Vec::with_capacity(sites.len());
        for mut site in sites {
            if !(site.occupancy > 0.0 && site.occupancy <= 1.0) {
                return Err(BathError::Domain(format!(
                    "site {} has occupancy {} outside (0, 1]",
                    site.element, site.occupancy
                )));
            }
            if site.frac.iter().any(|x| !x.is_finite()) {
                return Err(BathError::Domain(format!(
                    "site {} has non-finite coordinates",
                    site.element
                )));
            }
            site.frac = site.frac.map(wrap_unit);
            wrapped.push(site);
        }
        Ok(CrystalCell {
            lattice,
            sites: wrapped,
        })
    }

    /// Lattice vectors as rows.
    pub fn lattice(&self) -> &Matrix3<f64> {
        &self.lattice
    }

    pub fn sites(&self) -> &[CrystalSite] {
        &self.sites
    }

    pub fn volume(&self) -> f64 {
        self.lattice.determinant().abs()
    }

    pub fn to_cartesian(&self, frac: &[f64; 3]) -> Vec3 {
        self.lattice.transpose() * Vec3::new(frac[0], frac[1], frac[2])
    }

    /// Shortest distance (Å) between any site of `a` and any periodic image of a site of `b`,
    /// excluding zero-distance self matches.
    pub fn min_distance_between(&self, a: &str, b: &str) -> Option<f64> {
        let mut best: Option<f64> = None;
        for sa in self.sites.iter().filter(|s| s.element == a) {
            for sb in self.sites.iter().filter(|s| s.element == b) {
                let mut d = Vec3::new(
                    sb.frac[0] - sa.frac[0],
                    sb.frac[1] - sa.frac[1],
                    sb.frac[2] - sa.frac[2],
                );
                d = d.map(|x| x - x.round());
                // Search neighbouring images around the minimum-image vector; enough
                // for the skewed cells found in practice.
                for i in -2..=2 {
                    for j in -2..=2 {
                        for k in -2..=2 {
                            let f = d + Vec3::new(i as f64, j as f64, k as f64);
                            let r = (self.lattice.transpose() * f).norm();
                            if r > 1e-6 && best.is_none_or(|b| r < b) {
                                best = Some(r);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Where the defect sits inside the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DefectSite {
    /// Centered on the Cartesian origin; a site located exactly there is removed.
    Origin,
    /// Substitutes the given site of the cell (index into [`CrystalCell::sites`]).
    Site(usize),
    /// Substitutes the first site of the cell.
    #[default]
    FirstSite,
}

/// One replicated site, positioned relative to the defect.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePoint {
    pub element: String,
    pub position: Vec3,
    pub occupancy: f64,
}

/// All periodic images of all sites within `radius` (Å) of the defect, the defect site excluded.
pub fn build_supercell(
    cell: &CrystalCell,
    radius: f64,
    defect: DefectSite,
) -> Result<Vec<LatticePoint>, BathError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(BathError::Domain(format!(
            "bath radius must be positive, got {radius}"
        )));
    }
    let basis = cell.lattice.transpose();
    let inv = basis
        .try_inverse()
        .ok_or_else(|| BathError::Domain("degenerate cell".into()))?;
    let (center, skip) = match defect {
        DefectSite::Origin => (Vec3::zeros(), None),
        DefectSite::FirstSite | DefectSite::Site(_) => {
            let idx = if let DefectSite::Site(i) = defect {
                i
            } else {
                0
            };
            let site = cell.sites.get(idx).ok_or_else(|| {
                BathError::Domain(format!(
                    "defect site {idx} out of range ({} sites)",
                    cell.sites.len()
                ))
            })?;
            (cell.to_cartesian(&site.frac), Some(idx))
        }
    };
    // Plane spacing along each lattice direction is 1/|row of inverse|.
    let reach: Vec<i64> = (0..3)
        .map(|k| (radius * inv.row(k).norm()).ceil() as i64 + 1)
        .collect();

    let mut points = Vec::new();
    for i in -reach[0]..=reach[0] {
        for j in -reach[1]..=reach[1] {
            for k in -reach[2]..=reach[2] {
                let shift = Vec3::new(i as f64, j as f64, k as f64);
                for (s, site) in cell.sites.iter().enumerate() {
                    if skip == Some(s) && i == 0 && j == 0 && k == 0 {
                        continue;
                    }
                    let f = Vec3::new(site.frac[0], site.frac[1], site.frac[2]) + shift;
                    let position = basis * f - center;
                    let r = position.norm();
                    if r > radius || r < 1e-9 {
                        continue;
                    }
                    points.push(LatticePoint {
                        element: site.element.clone(),
                        position,
                        occupancy: site.occupancy,
                    });
                }
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathSpin {
    /// Position relative to the defect (Å).
    pub position: Vec3,
    pub isotope: Isotope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Lattice,
    RandomUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathInstance {
    pub spins: Vec<BathSpin>,
    pub seed: u64,
    pub radius: f64,
    pub provenance: Provenance,
}

impl BathInstance {
    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// Debug dump: `x_A,y_A,z_A,element,A`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_A,y_A,z_A,element,A\n");
        for s in &self.spins {
            out.push_str(&format!(
                "{:?},{:?},{:?},{},{}\n",
                s.position.x, s.position.y, s.position.z, s.isotope.element, s.isotope.mass_number
            ));
        }
        out
    }
}

/// Deterministic per-instance seed derived from a master seed and a material label.
pub fn instance_seed(master_seed: u64, material_id: &str, instance: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((material_id.len() as u64).to_le_bytes());
    h.update(material_id.as_bytes());
    h.update(instance.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Assigns each site an isotope by natural abundance (after Bernoulli occupancy retention).
/// Only spinful assignments are kept.
pub fn sample_lattice_bath(
    points: &[LatticePoint],
    table: &IsotopeTable,
    seed: u64,
    radius: f64,
) -> Result<BathInstance, BathError> {
    let mut cumulative: HashMap<&str, Vec<(f64, &Isotope)>> = HashMap::new();
    for p in points {
        if cumulative.contains_key(p.element.as_str()) {
            continue;
        }
        let mut acc = 0.0;
        let list = table
            .isotopes_of(&p.element)?
            .into_iter()
            .map(|iso| {
                acc += iso.abundance;
                (acc, iso)
            })
            .collect();
        cumulative.insert(p.element.as_str(), list);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spins = Vec::new();
    for p in points {
        // Two draws per site keep the stream aligned regardless of outcomes.
        let keep: f64 = rng.random();
        let pick: f64 = rng.random();
        if keep >= p.occupancy {
            continue;
        }
        let chosen = cumulative[p.element.as_str()]
            .iter()
            .find(|(edge, _)| pick < *edge)
            .map(|(_, iso)| *iso);
        if let Some(iso) = chosen.filter(|iso| iso.is_spinful()) {
            spins.push(BathSpin {
                position: p.position,
                isotope: iso.clone(),
            });
        }
    }
    Ok(BathInstance {
        spins,
        seed,
        radius,
        provenance: Provenance::Lattice,
    })
}

/// Volume (cm³) of a ball of radius `radius` Å.
pub fn ball_volume_cm3(radius: f64) -> f64 {
    4.0 / 3.0 * PI * (radius * CM_PER_ANGSTROM).powi(3)
}

/// Poisson(density × volume) nuclei of one isotope, uniform in a ball of `radius` Å.
pub fn sample_random_bath(
    isotope: &Isotope,
    density: f64,
    radius: f64,
    seed: u64,
) -> Result<BathInstance, BathError> {
    if !(density >= 0.0) || !density.is_finite() {
        return Err(BathError::Domain(format!(
            "density must be non-negative, got {density}"
        )));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(BathError::Domain(format!(
            "bath radius must be positive, got {radius}"
        )));
    }
    if !isotope.is_spinful() {
        return Err(BathError::Domain(format!(
            "{} has no nuclear spin",
            isotope.label()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = density * ball_volume_cm3(radius);
    let count = if mean > 0.0 {
        let poisson = Poisson::new(mean)
            .map_err(|e| BathError::Domain(format!("poisson mean {mean}: {e}")))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let mut spins = Vec::with_capacity(count);
    while spins.len() < count {
        let r = radius * rng.random::<f64>().cbrt();
        let cos_theta: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let position = Vec3::new(
            r * sin_theta * phi.cos(),
            r * sin_theta * phi.sin(),
            r * cos_theta,
        );
        if position.norm() == 0.0 {
            continue;
        }
        spins.push(BathSpin {
            position,
            isotope: isotope.clone(),
        });
    }
    Ok(BathInstance {
        spins,
        seed,
        radius,
        provenance: Provenance::RandomUniform,
    })
}

/// Bath radius and pair cutoff (Å) scaled so that a bath of `density` cm⁻³ holds as many
/// spins and pairs as the defaults do at [`REFERENCE_SPIN_DENSITY`].
pub fn scaled_cutoffs(density: f64) -> (f64, f64) {
    let s = (REFERENCE_SPIN_DENSITY / density).cbrt();
    (DEFAULT_BATH_RADIUS * s, DEFAULT_PAIR_CUTOFF * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CceOrder {
    First,
    Second,
}

impl CceOrder {
    pub fn from_number(n: u32) -> Option<Self> {
        match n {
            1 => Some(CceOrder::First),
            2 => Some(CceOrder::Second),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterSet {
    pub singles: Vec<usize>,
    /// Unordered pairs stored as (i, j) with i < j, sorted.
    pub pairs: Vec<(usize, usize)>,
}

/// Singles are every spin; pairs are all spin pairs no further apart than `r_pair` (Å).
pub fn enumerate_clusters(bath: &BathInstance, order: CceOrder, r_pair: f64) -> ClusterSet {
    let singles: Vec<usize> = (0..bath.len()).collect();
    if order == CceOrder::First || !(r_pair > 0.0) {
        return ClusterSet {
            singles,
            pairs: Vec::new(),
        };
    }
    // Cell list with cell edge r_pair: partners lie in the 27 neighbouring cells.
    let key = |p: &Vec3| {
        [
            (p.x / r_pair).floor() as i64,
            (p.y / r_pair).floor() as i64,
            (p.z / r_pair).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, s) in bath.spins.iter().enumerate() {
        grid.entry(key(&s.position)).or_default().push(i);
    }
    let r2 = r_pair * r_pair;
    let mut pairs = Vec::new();
    for (i, s) in bath.spins.iter().enumerate() {
        let [cx, cy, cz] = key(&s.position);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(members) = grid.get(&[cx + dx, cy + dy, cz + dz]) else {
                        continue;
                    };
                    for &j in members {
                        if j > i && (bath.spins[j].position - s.position).norm_squared() <= r2 {
                            pairs.push((i, j));
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    ClusterSet { singles, pairs }
}

/// Which pair clusters to keep when separating homo- and heteronuclear interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PairSelection {
    #[default]
    All,
    Homonuclear,
    Heteronuclear,
}

/// Filters the pairs of `clusters` by whether both members are the same nuclide. Singles are kept.
pub fn partition_by_species(
    bath: &BathInstance,
    clusters: &ClusterSet,
    mode: PairSelection,
) -> ClusterSet {
    let pairs = clusters
        .pairs
        .iter()
        .copied()
        .filter(|&(i, j)| {
            let same = bath.spins[i].isotope.same_species(&bath.spins[j].isotope);
            match mode {
                PairSelection::All => true,
                PairSelection::Homonuclear => same,
                PairSelection::Heteronuclear => !same,
            }
        })
        .collect();
    ClusterSet {
        singles: clusters.singles.clone(),
        pairs,
    }
}
