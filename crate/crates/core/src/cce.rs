//! Hahn-echo coherence of a central electron spin under the cluster-correlation expansion.
//!
//! All Hamiltonians are in rad/s and are written in the electron rotating frame:
//! the electron Zeeman term commutes with every other term and is refocused
//! exactly by the echo, so dropping it changes nothing but round-off. The
//! joint-space reference can optionally keep it (see [`Frame`]).

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::{
    build_supercell, enumerate_clusters, instance_seed, partition_by_species, sample_lattice_bath,
    sample_random_bath, BathError, BathInstance, BathSpin, CceOrder, ClusterSet, CrystalCell,
    DefectSite, PairSelection, Vec3, DEFAULT_BATH_RADIUS, DEFAULT_PAIR_CUTOFF,
};
use crate::isotopes::{Isotope, IsotopeTable, Spin};
use crate::spin::{
    c, embed, identity, trace, CMatrix, HermitianOperator, KernelError, SpinOperators,
};

const METERS_PER_ANGSTROM: f64 = 1e-10;

/// Pair factors whose single-spin denominator falls below this magnitude are clamped.
pub const PAIR_DENOMINATOR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// μ₀/4π in T²·m³/J.
    pub mu0_over_4pi: f64,
    /// Bohr magneton, J/T.
    pub mu_b: f64,
    /// Nuclear magneton, J/T.
    pub mu_n: f64,
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
}

/// CODATA 2018.
pub const CODATA: PhysicalConstants = PhysicalConstants {
    mu0_over_4pi: 1e-7,
    mu_b: 9.274_010_078_3e-24,
    mu_n: 5.050_783_746_1e-27,
    hbar: 1.054_571_817e-34,
};

impl Default for PhysicalConstants {
    fn default() -> Self {
        CODATA
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error(
        "clusters of {0} spins are not supported by the conditional-branch evaluator (maximum 2)"
    )]
    UnsupportedOrder(usize),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Magnetic field along lab z (T).
    pub field_t: f64,
    pub electron_g: f64,
    pub order: CceOrder,
    /// Largest free-evolution time (s).
    pub t_max: f64,
    pub n_times: usize,
    pub n_instances: usize,
    pub master_seed: u64,
    /// Bath radius (Å).
    pub r_bath: f64,
    /// Pair cutoff (Å).
    pub r_pair: f64,
    pub pairs: PairSelection,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            field_t: 5.0,
            electron_g: 2.0,
            order: CceOrder::Second,
            t_max: 3e-3,
            n_times: 201,
            n_instances: 10,
            master_seed: 0,
            r_bath: DEFAULT_BATH_RADIUS,
            r_pair: DEFAULT_PAIR_CUTOFF,
            pairs: PairSelection::All,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), CceError> {
        let bad = |m: String| Err(CceError::Config(m));
        if !(self.field_t > 0.0) || !self.field_t.is_finite() {
            return bad(format!("field must be positive, got {} T", self.field_t));
        }
        if !self.electron_g.is_finite() {
            return bad("electron g must be finite".into());
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return bad(format!("t_max must be positive, got {} s", self.t_max));
        }
        if self.n_times < 2 {
            return bad(format!("need at least 2 time points, got {}", self.n_times));
        }
        if self.n_instances < 1 {
            return bad("need at least 1 bath instance".into());
        }
        if !(self.r_bath > 0.0) || !(self.r_pair > 0.0) {
            return bad(format!(
                "bath radius and pair cutoff must be positive, got {} Å and {} Å",
                self.r_bath, self.r_pair
            ));
        }
        Ok(())
    }

    /// Free-evolution times: `n_times` points spaced linearly over [0, t_max].
    pub fn times(&self) -> Vec<f64> {
        let n = self.n_times.max(2);
        (0..n)
            .map(|k| self.t_max * k as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl CoherenceCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t_s,L,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,L,stderr\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e}\n",
                self.times[k], self.signal[k], self.stderr[k]
            ));
        }
        out
    }
}

fn nonzero_distance(v: &Vec3, what: &str) -> Result<f64, CceError> {
    let r = v.norm();
    if r > 0.0 && r.is_finite() {
        Ok(r * METERS_PER_ANGSTROM)
    } else {
        Err(CceError::Domain(format!(
            "{what} has zero or non-finite length"
        )))
    }
}

/// Secular hyperfine vector (rad/s) of a nucleus at `position` (Å) from the electron.
pub fn hyperfine_vector(
    position: &Vec3,
    isotope: &Isotope,
    electron_g: f64,
) -> Result<Vector3<f64>, CceError> {
    let r = nonzero_distance(position, "hyperfine position")?;
    let n = position.normalize();
    let k = CODATA.mu0_over_4pi * electron_g * CODATA.mu_b * isotope.g_factor * CODATA.mu_n
        / CODATA.hbar
        / r.powi(3);
    Ok(Vector3::new(-3.0 * n.z * n.x, -3.0 * n.z * n.y, 1.0 - 3.0 * n.z * n.z) * k)
}

/// Nuclear Larmor frequency −g μ_N B / ħ (rad/s).
pub fn nuclear_larmor(isotope: &Isotope, field_t: f64) -> f64 {
    -isotope.g_factor * CODATA.mu_n * field_t / CODATA.hbar
}

/// Electron Larmor frequency g_e μ_B B / ħ (rad/s).
pub fn electron_larmor(electron_g: f64, field_t: f64) -> f64 {
    electron_g * CODATA.mu_b * field_t / CODATA.hbar
}

/// Dipolar coupling tensor K (δ_ab − 3 r̂_a r̂_b) between two nuclei, rad/s.
fn dipolar_tensor(a: &BathSpin, b: &BathSpin) -> Result<[[f64; 3]; 3], CceError> {
    let d = b.position - a.position;
    let r = nonzero_distance(&d, "internuclear vector")?;
    let n = d.normalize();
    let k =
        CODATA.mu0_over_4pi * CODATA.mu_n * CODATA.mu_n * a.isotope.g_factor * b.isotope.g_factor
            / CODATA.hbar
            / r.powi(3);
    let mut t = [[0.0; 3]; 3];
    for (p, row) in t.iter_mut().enumerate() {
        for (q, x) in row.iter_mut().enumerate() {
            let delta = if p == q { 1.0 } else { 0.0 };
            *x = k * (delta - 3.0 * n[p] * n[q]);
        }
    }
    Ok(t)
}

fn dipolar_on(
    a: &BathSpin,
    b: &BathSpin,
    ops: (&SpinOperators, &SpinOperators),
    slots: (usize, usize),
    dims: &[usize],
) -> Result<CMatrix, CceError> {
    let t = dipolar_tensor(a, b)?;
    let va = ops.0.vector();
    let vb = ops.1.vector();
    let n: usize = dims.iter().product();
    let mut h = CMatrix::zeros(n, n);
    for p in 0..3 {
        let left = embed(va[p], slots.0, dims)?;
        for q in 0..3 {
            if t[p][q] != 0.0 {
                h += &left * embed(vb[q], slots.1, dims)? * c(t[p][q], 0.0);
            }
        }
    }
    Ok(h)
}

/// Full dipole-dipole coupling of two nuclei on their pair space (first spin is the left factor).
pub fn nuclear_dipolar_hamiltonian(
    a: &BathSpin,
    b: &BathSpin,
) -> Result<HermitianOperator, CceError> {
    let ops = (
        SpinOperators::new(a.isotope.spin),
        SpinOperators::new(b.isotope.spin),
    );
    let dims = [ops.0.dim(), ops.1.dim()];
    let h = dipolar_on(a, b, (&ops.0, &ops.1), (0, 1), &dims)?;
    Ok(HermitianOperator::new(h)?)
}

/// Bath Hamiltonian and per-spin hyperfine operators A⃗·I⃗ on the cluster space.
struct ClusterHamiltonian {
    bath: CMatrix,
    hyperfine: CMatrix,
}

fn cluster_hamiltonian(
    spins: &[&BathSpin],
    config: &SimulationConfig,
) -> Result<ClusterHamiltonian, CceError> {
    let ops: Vec<SpinOperators> = spins
        .iter()
        .map(|s| SpinOperators::new(s.isotope.spin))
        .collect();
    let dims: Vec<usize> = ops.iter().map(SpinOperators::dim).collect();
    let n: usize = dims.iter().product();
    let mut bath = CMatrix::zeros(n, n);
    let mut hyperfine = CMatrix::zeros(n, n);
    for (k, s) in spins.iter().enumerate() {
        let w = nuclear_larmor(&s.isotope, config.field_t);
        bath += embed(&ops[k].sz, k, &dims)? * c(w, 0.0);
        let a = hyperfine_vector(&s.position, &s.isotope, config.electron_g)?;
        let v = ops[k].vector();
        let local = v[0] * c(a.x, 0.0) + v[1] * c(a.y, 0.0) + v[2] * c(a.z, 0.0);
        hyperfine += embed(&local, k, &dims)?;
    }
    for i in 0..spins.len() {
        for j in i + 1..spins.len() {
            bath += dipolar_on(spins[i], spins[j], (&ops[i], &ops[j]), (i, j), &dims)?;
        }
    }
    Ok(ClusterHamiltonian { bath, hyperfine })
}

fn cluster_spins<'b>(
    bath: &'b BathInstance,
    cluster: &[usize],
) -> Result<Vec<&'b BathSpin>, CceError> {
    cluster
        .iter()
        .map(|&i| {
            bath.spins.get(i).ok_or_else(|| {
                CceError::Domain(format!(
                    "cluster index {i} out of range ({} spins)",
                    bath.len()
                ))
            })
        })
        .collect()
}

/// Complex echo signal ℒ(t) of one cluster (0, 1 or 2 spins) by conditional-branch evolution.
///
/// With ρ_B maximally mixed, ℒ(t) = Tr[(U↑U↓)† U↓U↑]/d, where U_σ = exp(−i(H_B ± A⃗·I⃗/2)t/2).
pub fn cluster_coherence(
    bath: &BathInstance,
    cluster: &[usize],
    config: &SimulationConfig,
) -> Result<Vec<Complex64>, CceError> {
    if cluster.len() > 2 {
        return Err(CceError::UnsupportedOrder(cluster.len()));
    }
    let spins = cluster_spins(bath, cluster)?;
    let times = config.times();
    if spins.is_empty() {
        return Ok(vec![c(1.0, 0.0); times.len()]);
    }
    let h = cluster_hamiltonian(&spins, config)?;
    let half = &h.hyperfine * c(0.5, 0.0);
    let up = HermitianOperator::new(&h.bath + &half)?.eigen();
    let down = HermitianOperator::new(&h.bath - &half)?.eigen();
    let d = h.bath.nrows() as f64;
    Ok(times
        .iter()
        .map(|&t| {
            let tau = 0.5 * t;
            let (u_up, u_down) = (up.propagator(tau), down.propagator(tau));
            let forward = &u_down * &u_up;
            let backward = &u_up * &u_down;
            trace(&(backward.adjoint() * forward)) / d
        })
        .collect())
}

/// Frame for [`joint_space_coherence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frame {
    /// Electron Zeeman term omitted (it is refocused exactly).
    #[default]
    Rotating,
    /// Electron Zeeman term kept; only usable where ω_e·t stays well inside double precision.
    Lab,
}

/// Reference evaluation on the full electron ⊗ cluster space for clusters of any size.
///
/// ρ(0) = |↑⟩⟨↑| ⊗ 1/d is driven through (π/2)ₓ, t/2, πₓ, t/2 with ideal pulses and the
/// result Tr[ρ(t)S₊] is divided by its value for t = 0.
pub fn joint_space_coherence(
    bath: &BathInstance,
    cluster: &[usize],
    config: &SimulationConfig,
    frame: Frame,
) -> Result<Vec<Complex64>, CceError> {
    let spins = cluster_spins(bath, cluster)?;
    let h = cluster_hamiltonian(&spins, config)?;
    let n = h.bath.nrows();
    let e = SpinOperators::new(Spin::HALF);
    let one = identity(n);
    let mut joint = identity(2).kronecker(&h.bath) + e.sz.kronecker(&h.hyperfine);
    if frame == Frame::Lab {
        let we = electron_larmor(config.electron_g, config.field_t);
        joint += (&e.sz * c(we, 0.0)).kronecker(&one);
    }
    let evolution = HermitianOperator::new(joint)?.eigen();
    let sx = HermitianOperator::new(e.sx.kronecker(&one))?.eigen();
    let half_pi = sx.propagator(std::f64::consts::FRAC_PI_2);
    let pi = sx.propagator(std::f64::consts::PI);
    let s_plus = e.s_plus.kronecker(&one);

    let mut rho0 = CMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        rho0[(k, k)] = c(1.0 / n as f64, 0.0);
    }
    let rho1 = &half_pi * rho0 * half_pi.adjoint();
    let echo = |t: f64| {
        let u = evolution.propagator(0.5 * t);
        let seq = &u * &pi * &u;
        let rho = &seq * &rho1 * seq.adjoint();
        trace(&(rho * &s_plus))
    };
    let norm = echo(0.0);
    if norm.norm() < 1e-12 {
        return Err(CceError::Domain("echo normalization vanishes".into()));
    }
    Ok(config.times().iter().map(|&t| echo(t) / norm).collect())
}

/// CCE pair correlation factor ℒ_ij / (ℒ_i ℒ_j), clamped where the denominator is tiny.
pub fn pair_factor(pair: Complex64, single_i: Complex64, single_j: Complex64) -> Complex64 {
    let denom = single_i * single_j;
    if denom.norm() >= PAIR_DENOMINATOR_FLOOR {
        return pair / denom;
    }
    if denom.norm() == 0.0 {
        return c(1.0, 0.0);
    }
    let f = pair / denom;
    let m = f.norm();
    if m > 1.0 {
        f / m
    } else if m.is_finite() {
        f
    } else {
        c(1.0, 0.0)
    }
}

/// CCE-1 product over singles times (for pairs present) the CCE-2 correlation factors,
/// with magnitudes above one rescaled to one and the phase kept.
pub fn cce_curve(
    bath: &BathInstance,
    clusters: &ClusterSet,
    config: &SimulationConfig,
) -> Result<Vec<Complex64>, CceError> {
    let nt = config.times().len();
    let singles: Vec<Vec<Complex64>> = (0..bath.len())
        .into_par_iter()
        .map(|i| cluster_coherence(bath, &[i], config))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<Vec<Complex64>> = clusters
        .pairs
        .par_iter()
        .map(|&(i, j)| cluster_coherence(bath, &[i, j], config))
        .collect::<Result<_, _>>()?;

    let mut total = vec![c(1.0, 0.0); nt];
    for &i in &clusters.singles {
        let s = singles
            .get(i)
            .ok_or_else(|| CceError::Domain(format!("single index {i} out of range")))?;
        for (acc, v) in total.iter_mut().zip(s) {
            *acc *= v;
        }
    }
    for (&(i, j), lij) in clusters.pairs.iter().zip(&pairs) {
        for k in 0..nt {
            total[k] *= pair_factor(lij[k], singles[i][k], singles[j][k]);
        }
    }
    for v in &mut total {
        let norm = v.norm();
        if norm > 1.0 + 1e-9 {
            *v /= norm;
        }
    }
    Ok(total)
}

/// Where bath instances come from.
#[derive(Debug, Clone, PartialEq)]
pub enum BathSource {
    Lattice {
        cell: CrystalCell,
        defect: DefectSite,
        /// Label mixed into per-instance seeds.
        material_id: String,
    },
    Random {
        isotope: Isotope,
        /// Spins per cm³.
        density: f64,
        material_id: String,
    },
}

impl BathSource {
    pub fn material_id(&self) -> &str {
        match self {
            BathSource::Lattice { material_id, .. } | BathSource::Random { material_id, .. } => {
                material_id
            }
        }
    }
}

/// Draws bath instance `index` of an ensemble.
pub fn bath_instance(
    source: &BathSource,
    table: &IsotopeTable,
    config: &SimulationConfig,
    index: u64,
) -> Result<BathInstance, CceError> {
    let seed = instance_seed(config.master_seed, source.material_id(), index);
    Ok(match source {
        BathSource::Lattice { cell, defect, .. } => {
            let points = build_supercell(cell, config.r_bath, *defect)?;
            sample_lattice_bath(&points, table, seed, config.r_bath)?
        }
        BathSource::Random {
            isotope, density, ..
        } => sample_random_bath(isotope, *density, config.r_bath, seed)?,
    })
}

/// |ℒ(t)| of one bath instance under the configured CCE order and pair selection.
pub fn instance_coherence(
    bath: &BathInstance,
    config: &SimulationConfig,
) -> Result<Vec<f64>, CceError> {
    let clusters = enumerate_clusters(bath, config.order, config.r_pair);
    let clusters = partition_by_species(bath, &clusters, config.pairs);
    Ok(cce_curve(bath, &clusters, config)?
        .iter()
        .map(|z| z.norm())
        .collect())
}

/// Mean |ℒ(t)| over `n_instances` independently seeded baths, with sample standard deviation.
pub fn ensemble_coherence(
    source: &BathSource,
    table: &IsotopeTable,
    config: &SimulationConfig,
) -> Result<CoherenceCurve, CceError> {
    config.validate()?;
    let times = config.times();
    let supercell = match source {
        BathSource::Lattice { cell, defect, .. } => {
            Some(build_supercell(cell, config.r_bath, *defect)?)
        }
        BathSource::Random { .. } => None,
    };
    let curves: Vec<Vec<f64>> = (0..config.n_instances as u64)
        .into_par_iter()
        .map(|i| {
            let bath = match (&supercell, source) {
                (Some(points), _) => {
                    let seed = instance_seed(config.master_seed, source.material_id(), i);
                    sample_lattice_bath(points, table, seed, config.r_bath)?
                }
                _ => bath_instance(source, table, config, i)?,
            };
            log::debug!("instance {i}: {} spins", bath.len());
            instance_coherence(&bath, config)
        })
        .collect::<Result<_, _>>()?;

    let m = curves.len() as f64;
    let mut signal = vec![0.0; times.len()];
    let mut stderr = vec![0.0; times.len()];
    for k in 0..times.len() {
        let mean = curves.iter().map(|v| v[k]).sum::<f64>() / m;
        signal[k] = mean;
        if curves.len() > 1 {
            let var = curves.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            stderr[k] = var.sqrt();
        }
    }
    Ok(CoherenceCurve {
        times,
        signal,
        stderr,
    })
}
