#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use spinbath::bath::{BathSpin, Provenance, Vec3};
use spinbath::isotopes::Isotope;
use spinbath::{BathInstance, IsotopeTable, SimulationConfig};

pub const MU0_OVER_4PI: f64 = 1e-7;
pub const MU_B: f64 = 9.274_010_078_3e-24;
pub const MU_N: f64 = 5.050_783_746_1e-27;
pub const HBAR: f64 = 1.054_571_817e-34;

pub type M = DMatrix<Complex64>;

pub fn z(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn iso(label: &str) -> Isotope {
    IsotopeTable::bundled().find(label).unwrap().clone()
}

pub fn bath_of(spins: &[(Vec3, Isotope)]) -> BathInstance {
    BathInstance {
        spins: spins
            .iter()
            .map(|(position, isotope)| BathSpin {
                position: *position,
                isotope: isotope.clone(),
            })
            .collect(),
        seed: 0,
        radius: 1e3,
        provenance: Provenance::RandomUniform,
    }
}

pub fn config(field_t: f64, t_max: f64, n_times: usize) -> SimulationConfig {
    SimulationConfig {
        field_t,
        t_max,
        n_times,
        ..SimulationConfig::default()
    }
}

pub fn hyperfine_oracle(position: Vec3, g_nuc: f64) -> [f64; 3] {
    let r = position.norm() * 1e-10;
    let n = position / position.norm();
    let k = MU0_OVER_4PI * 2.0 * MU_B * g_nuc * MU_N / HBAR / r.powi(3);
    let delta = |a: usize| if a == 2 { 1.0 } else { 0.0 };
    [0, 1, 2].map(|a| k * (delta(a) - 3.0 * n.z * n[a]))
}

pub fn spin_matrices(twice: u32) -> [M; 3] {
    let d = twice as usize + 1;
    let j = twice as f64 / 2.0;
    let mut plus = M::zeros(d, d);
    for k in 1..d {
        let m = j - k as f64;
        plus[(k - 1, k)] = z((j * (j + 1.0) - m * (m + 1.0)).sqrt());
    }
    let minus = plus.adjoint();
    let x = (&plus + &minus) * z(0.5);
    let y = (&plus - &minus) * Complex64::new(0.0, -0.5);
    let zz = M::from_fn(d, d, |r, c| if r == c { z(j - r as f64) } else { z(0.0) });
    [x, y, zz]
}

pub fn place(op: &M, slot: usize, dims: &[usize]) -> M {
    let mut out = M::identity(1, 1);
    for (k, &d) in dims.iter().enumerate() {
        let factor = if k == slot {
            op.clone()
        } else {
            M::identity(d, d)
        };
        out = out.kronecker(&factor);
    }
    out
}

/// Hahn echo on the full electron ⊗ bath space with Padé matrix exponentials.
pub fn exact_echo(spins: &[(Vec3, Isotope)], field_t: f64, times: &[f64]) -> Vec<Complex64> {
    let dims: Vec<usize> = spins.iter().map(|(_, i)| i.spin.multiplicity()).collect();
    let d: usize = dims.iter().product();
    let ops: Vec<[M; 3]> = spins
        .iter()
        .map(|(_, i)| spin_matrices(i.spin.twice()))
        .collect();
    let mut hb = M::zeros(d, d);
    let mut hf = M::zeros(d, d);
    for (k, (pos, isotope)) in spins.iter().enumerate() {
        let w = -isotope.g_factor * MU_N * field_t / HBAR;
        hb += place(&ops[k][2], k, &dims) * z(w);
        let a = hyperfine_oracle(*pos, isotope.g_factor);
        for c in 0..3 {
            hf += place(&ops[k][c], k, &dims) * z(a[c]);
        }
    }
    for i in 0..spins.len() {
        for j in i + 1..spins.len() {
            let dv = spins[j].0 - spins[i].0;
            let r = dv.norm() * 1e-10;
            let n = dv / dv.norm();
            let k = MU0_OVER_4PI * MU_N * MU_N * spins[i].1.g_factor * spins[j].1.g_factor
                / HBAR
                / r.powi(3);
            for a in 0..3 {
                for b in 0..3 {
                    let t = k * (if a == b { 1.0 } else { 0.0 } - 3.0 * n[a] * n[b]);
                    hb += place(&ops[i][a], i, &dims) * place(&ops[j][b], j, &dims) * z(t);
                }
            }
        }
    }
    let e = spin_matrices(1);
    let one = M::identity(d, d);
    let h = M::identity(2, 2).kronecker(&hb) + e[2].kronecker(&hf);
    let sx = e[0].kronecker(&one);
    let rot = |theta: f64| (&sx * Complex64::new(0.0, -theta)).exp();
    let (p2, p1) = (rot(std::f64::consts::FRAC_PI_2), rot(std::f64::consts::PI));
    let mut rho0 = M::zeros(2 * d, 2 * d);
    for k in 0..d {
        rho0[(k, k)] = z(1.0 / d as f64);
    }
    let rho1 = &p2 * rho0 * p2.adjoint();
    let mut s_plus = M::zeros(2, 2);
    s_plus[(0, 1)] = z(1.0);
    let s_plus = s_plus.kronecker(&one);
    let signal = |t: f64| {
        let u = (&h * Complex64::new(0.0, -t / 2.0)).exp();
        let seq = &u * &p1 * &u;
        (&seq * &rho1 * seq.adjoint() * &s_plus).trace()
    };
    let norm = signal(0.0);
    times.iter().map(|&t| signal(t) / norm).collect()
}

/// Two-pulse ESEEM of one spin-1/2 nucleus (Mims), τ = t/2.
pub fn mims(position: Vec3, isotope: &Isotope, field_t: f64, t: f64) -> f64 {
    let a = hyperfine_oracle(position, isotope.g_factor);
    let secular = a[2];
    let perp = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let wi = -isotope.g_factor * MU_N * field_t / HBAR;
    let wa = ((wi + secular / 2.0).powi(2) + (perp / 2.0).powi(2)).sqrt();
    let wb = ((wi - secular / 2.0).powi(2) + (perp / 2.0).powi(2)).sqrt();
    let k = (perp * wi / (wa * wb)).powi(2);
    let tau = t / 2.0;
    1.0 - k / 4.0
        * (2.0 - 2.0 * (wa * tau).cos() - 2.0 * (wb * tau).cos()
            + ((wa - wb) * tau).cos()
            + ((wa + wb) * tau).cos())
}

pub fn position_from(r: f64, cos_theta: f64, phi: f64) -> Vec3 {
    let s = (1.0 - cos_theta * cos_theta).sqrt();
    Vec3::new(r * s * phi.cos(), r * s * phi.sin(), r * cos_theta)
}
