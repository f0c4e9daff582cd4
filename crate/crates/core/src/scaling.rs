//! Closed-form T₂ scaling law, its combination rule, the heteronuclear decoupling
//! field, and calibration of the law's constants from simulated data.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cce::CODATA;
use crate::cif::RealizedStructure;
use crate::fit::{
    fit_power_law, fit_power_law_fixed_exponent, power_law_regression, FitError, PowerPoint,
};
use crate::isotopes::{spinful_isotopes_of, Isotope, IsotopeError, IsotopeTable, Spin};

/// Element density of the hypothetical single-element hosts (cm⁻³).
pub const ELEMENT_TABLE_DENSITY: f64 = 1.0e23;
/// Elements left out of the element table.
pub const EXCLUDED_ELEMENTS: [&str; 3] = ["He", "Ne", "Ar"];
/// Largest allowed |exponent + 1| of a per-isotope density fit during calibration.
pub const DENSITY_EXPONENT_TOLERANCE: f64 = 0.1;

const METERS_PER_ANGSTROM: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("{0}")]
    Domain(String),
    #[error("{0} and {1} have equal g-factors; no decoupling field exists")]
    Homonuclear(String, String),
    #[error("calibration needs more {axis}: {detail}")]
    Calibration { axis: &'static str, detail: String },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Isotope(#[from] IsotopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    /// cm⁻³·s
    pub c: f64,
    pub g_exponent: f64,
    pub i_exponent: f64,
    pub n_exponent: f64,
    /// Exponent of the electron-g prefactor correction.
    pub ge_exponent: f64,
}

impl Default for ScalingConstants {
    fn default() -> Self {
        ScalingConstants {
            c: 1.5e18,
            g_exponent: -1.6,
            i_exponent: -1.1,
            n_exponent: -1.0,
            ge_exponent: -3.0 / 8.0,
        }
    }
}

impl ScalingConstants {
    pub fn validate(&self) -> Result<(), ScalingError> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(ScalingError::Domain(format!(
                "prefactor c must be positive, got {}",
                self.c
            )));
        }
        for (name, v) in [
            ("g", self.g_exponent),
            ("I", self.i_exponent),
            ("n", self.n_exponent),
            ("electron g", self.ge_exponent),
        ] {
            if !(v < 0.0) {
                return Err(ScalingError::Domain(format!(
                    "{name} exponent must be negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A coherence time, or no nuclear-spin limit at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum T2Value {
    Finite(f64),
    Unbounded,
}

impl T2Value {
    pub fn seconds(self) -> Option<f64> {
        match self {
            T2Value::Finite(t) => Some(t),
            T2Value::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        self == T2Value::Unbounded
    }
}

impl fmt::Display for T2Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            T2Value::Finite(t) => write!(f, "{t:e}"),
            T2Value::Unbounded => f.write_str("UNBOUNDED"),
        }
    }
}

/// c·|g|^β·I^γ·n^α in seconds, with n in cm⁻³.
pub fn t2_isotope(
    g: f64,
    spin: f64,
    density: f64,
    constants: &ScalingConstants,
) -> Result<f64, ScalingError> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(ScalingError::Domain(format!(
            "density must be positive, got {density} cm⁻³"
        )));
    }
    if !(spin > 0.0) {
        return Err(ScalingError::Domain(format!(
            "nuclear spin must be positive, got {spin}"
        )));
    }
    if g == 0.0 || !g.is_finite() {
        return Err(ScalingError::Domain(format!(
            "g-factor must be finite and non-zero, got {g}"
        )));
    }
    Ok(constants.c
        * g.abs().powf(constants.g_exponent)
        * spin.powf(constants.i_exponent)
        * density.powf(constants.n_exponent))
}

/// (Σ T₂ᵢ⁻²)^(−1/2); an empty list has no nuclear limit.
pub fn combine_t2(components: &[f64]) -> Result<T2Value, ScalingError> {
    if components.is_empty() {
        return Ok(T2Value::Unbounded);
    }
    if let Some(&t) = components.iter().find(|&&t| !(t > 0.0) || !t.is_finite()) {
        return Err(ScalingError::Domain(format!(
            "component T2 must be positive and finite, got {t}"
        )));
    }
    let shortest = components.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = components.iter().map(|&t| (shortest / t).powi(2)).sum();
    Ok(T2Value::Finite(shortest / sum.sqrt()))
}

/// Solves Σ (T/T₂ᵢ)^ηᵢ = 1 for T by bisection.
pub fn exact_combined_t2(components: &[(f64, f64)]) -> Result<f64, ScalingError> {
    if components.is_empty() {
        return Err(ScalingError::Domain("no components".into()));
    }
    if components
        .iter()
        .any(|&(t, eta)| !(t > 0.0) || !(eta > 0.0))
    {
        return Err(ScalingError::Domain(
            "components need positive T2 and exponent".into(),
        ));
    }
    let f = |t: f64| {
        components
            .iter()
            .map(|&(ti, eta)| (t / ti).powf(eta))
            .sum::<f64>()
            - 1.0
    };
    let mut lo = 0.0;
    let mut hi = components.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    while (hi - lo) > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest relative deviation of the η = 2 combination rule from the exact implicit
/// solution, over ηᵢ, ηⱼ ∈ [2, 3] for two baths with T₂ⱼ/T₂ᵢ = `ratio`.
pub fn combination_error_bound_check(ratio: f64) -> Result<f64, ScalingError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(ScalingError::Domain(format!(
            "ratio must lie in (0, 1], got {ratio}"
        )));
    }
    const STEPS: usize = 40;
    let approx = match combine_t2(&[1.0, ratio])? {
        T2Value::Finite(t) => t,
        T2Value::Unbounded => unreachable!(),
    };
    let mut worst: f64 = 0.0;
    for a in 0..=STEPS {
        for b in 0..=STEPS {
            let eta_i = 2.0 + a as f64 / STEPS as f64;
            let eta_j = 2.0 + b as f64 / STEPS as f64;
            let exact = exact_combined_t2(&[(1.0, eta_i), (ratio, eta_j)])?;
            worst = worst.max((approx - exact).abs() / exact);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingEstimate {
    /// Tesla.
    pub b_dec: f64,
    pub pair: (Isotope, Isotope),
    /// Å.
    pub l: f64,
}

/// Field above which the Zeeman mismatch of two species exceeds their dipolar coupling at distance `l` Å.
pub fn decoupling_field(
    a: &Isotope,
    b: &Isotope,
    l: f64,
) -> Result<DecouplingEstimate, ScalingError> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(ScalingError::Domain(format!(
            "distance must be positive, got {l} Å"
        )));
    }
    let dg = a.g_factor - b.g_factor;
    if dg == 0.0 {
        return Err(ScalingError::Homonuclear(a.label(), b.label()));
    }
    let r = l * METERS_PER_ANGSTROM;
    let b_dec =
        CODATA.mu0_over_4pi * CODATA.mu_n / r.powi(3) * (a.g_factor * b.g_factor / dg).abs();
    Ok(DecouplingEstimate {
        b_dec,
        pair: (a.clone(), b.clone()),
        l,
    })
}

/// Decoupling fields for every pair of spinful isotopes of different elements in `structure`,
/// each at the shortest realized distance between the two elements.
pub fn material_decoupling(
    structure: &RealizedStructure,
    table: &IsotopeTable,
) -> Result<Vec<DecouplingEstimate>, ScalingError> {
    let elements: Vec<String> = structure.composition().into_keys().collect();
    let mut out = Vec::new();
    for (i, ea) in elements.iter().enumerate() {
        for eb in &elements[i + 1..] {
            let Some(l) = structure.cell.min_distance_between(ea, eb) else {
                continue;
            };
            for a in spinful_isotopes_of(table, ea)? {
                for b in spinful_isotopes_of(table, eb)? {
                    if a.g_factor != b.g_factor {
                        out.push(decoupling_field(a, b, l)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Prefactor for a transition with effective electron g-factor `g_eff`: c·(g_eff/2)^δ.
pub fn transition_prefactor(g_eff: f64, constants: &ScalingConstants) -> Result<f64, ScalingError> {
    if !(g_eff > 0.0) || !g_eff.is_finite() {
        return Err(ScalingError::Domain(format!(
            "effective g must be positive, got {g_eff}"
        )));
    }
    Ok(constants.c * (g_eff / 2.0).powf(constants.ge_exponent))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotopeT2 {
    pub isotope: Isotope,
    /// cm⁻³.
    pub density: f64,
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Prediction {
    pub per_isotope: Vec<IsotopeT2>,
    pub combined: T2Value,
    pub eta_assumed: f64,
}

/// Per-isotope and combined T₂ for a set of spinful isotope densities (cm⁻³).
pub fn predict_t2(
    isotope_densities: &[(Isotope, f64)],
    constants: &ScalingConstants,
) -> Result<T2Prediction, ScalingError> {
    let mut per_isotope = Vec::new();
    for (iso, n) in isotope_densities {
        if !iso.is_spinful() || *n == 0.0 {
            continue;
        }
        per_isotope.push(IsotopeT2 {
            isotope: iso.clone(),
            density: *n,
            t2: t2_isotope(iso.g_factor, iso.spin.value(), *n, constants)?,
        });
    }
    let components: Vec<f64> = per_isotope.iter().map(|p| p.t2).collect();
    Ok(T2Prediction {
        combined: combine_t2(&components)?,
        per_isotope,
        eta_assumed: 2.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementT2 {
    pub element: String,
    pub z: u32,
    pub t2: T2Value,
}

/// T₂ of every tabulated element as a natural-abundance single-element host at `density` cm⁻³.
pub fn element_table(
    table: &IsotopeTable,
    density: f64,
    constants: &ScalingConstants,
) -> Result<Vec<ElementT2>, ScalingError> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(ScalingError::Domain(format!(
            "element density must be positive, got {density}"
        )));
    }
    let mut rows = Vec::new();
    for element in table.elements() {
        if EXCLUDED_ELEMENTS.contains(&element) {
            continue;
        }
        let isotopes: Vec<(Isotope, f64)> = table
            .isotopes_of(element)?
            .into_iter()
            .map(|iso| (iso.clone(), iso.abundance * density))
            .collect();
        let z = table.atomic_number(element).unwrap_or(0);
        rows.push(ElementT2 {
            element: element.to_string(),
            z,
            t2: predict_t2(&isotopes, constants)?.combined,
        });
    }
    rows.sort_by_key(|r| r.z);
    Ok(rows)
}

/// CSV `element,Z,t2_s_or_UNBOUNDED`.
pub fn element_table_csv(rows: &[ElementT2]) -> String {
    let mut out = String::from("element,Z,t2_s_or_UNBOUNDED\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.element, r.z, r.t2));
    }
    out
}

/// One simulated T₂ for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub isotope: Isotope,
    /// cm⁻³.
    pub density: f64,
    /// Seconds.
    pub t2: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityStage {
    pub isotope: String,
    pub g_factor: f64,
    pub spin: Spin,
    /// Free-exponent fit of T₂ against density.
    pub density_exponent: f64,
    pub density_exponent_stderr: f64,
    /// Coefficient with the density exponent fixed at −1.
    pub a: f64,
    pub a_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GStage {
    pub g_exponent: f64,
    pub g_exponent_stderr: f64,
    /// b(I) per spin series.
    pub b: Vec<(Spin, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub constants: ScalingConstants,
    pub stderr_c: f64,
    pub stderr_g_exponent: f64,
    pub stderr_i_exponent: f64,
    pub per_isotope: Vec<DensityStage>,
    pub per_spin: Vec<(Spin, f64)>,
}

/// Stage 1: T₂ ∝ n^α per isotope, checked against α = −1, then a = T₂·n with α fixed.
pub fn calibrate_density_stage(
    dataset: &[CalibrationPoint],
) -> Result<Vec<DensityStage>, ScalingError> {
    let mut groups: BTreeMap<String, Vec<&CalibrationPoint>> = BTreeMap::new();
    for p in dataset {
        groups.entry(p.isotope.label()).or_default().push(p);
    }
    if groups.is_empty() {
        return Err(ScalingError::Calibration {
            axis: "isotopes",
            detail: "dataset is empty".into(),
        });
    }
    let mut out = Vec::new();
    for (label, pts) in groups {
        let mut densities: Vec<f64> = pts.iter().map(|p| p.density).collect();
        densities.sort_by(f64::total_cmp);
        densities.dedup();
        if densities.len() < 3 {
            return Err(ScalingError::Calibration {
                axis: "densities",
                detail: format!("{label} has {} distinct densities, need 3", densities.len()),
            });
        }
        let points: Vec<PowerPoint> = pts.iter().map(|p| (p.density, p.t2, p.stderr)).collect();
        let free = fit_power_law(&points)?;
        if (free.exponent + 1.0).abs() > DENSITY_EXPONENT_TOLERANCE {
            return Err(ScalingError::Domain(format!(
                "{label}: density exponent {:.3} is not within {DENSITY_EXPONENT_TOLERANCE} of -1",
                free.exponent
            )));
        }
        let fixed = fit_power_law_fixed_exponent(&points, -1.0)?;
        let iso = &pts[0].isotope;
        out.push(DensityStage {
            isotope: label,
            g_factor: iso.g_factor,
            spin: iso.spin,
            density_exponent: free.exponent,
            density_exponent_stderr: free.stderr_exponent,
            a: fixed.coefficient,
            a_stderr: fixed.stderr_coefficient,
        });
    }
    Ok(out)
}

/// Stage 2: a = b(I)·|g|^β with one β shared by all spin series.
pub fn calibrate_g_stage(stages: &[DensityStage]) -> Result<GStage, ScalingError> {
    let mut series: BTreeMap<Spin, Vec<(f64, f64)>> = BTreeMap::new();
    for s in stages {
        if s.g_factor == 0.0 || !(s.a > 0.0) {
            return Err(ScalingError::Domain(format!(
                "{}: g and a must be non-zero",
                s.isotope
            )));
        }
        series
            .entry(s.spin)
            .or_default()
            .push((s.g_factor.abs().ln(), s.a.ln()));
    }
    // Within-series centering removes each series' intercept.
    let (mut sxx, mut sxy, mut n, mut groups) = (0.0, 0.0, 0usize, 0usize);
    let means: Vec<(Spin, f64, f64)> = series
        .iter()
        .map(|(spin, pts)| {
            let k = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            (*spin, mx, my)
        })
        .collect();
    for ((_, pts), (_, mx, my)) in series.iter().zip(&means) {
        for (x, y) in pts {
            sxx += (x - mx).powi(2);
            sxy += (x - mx) * (y - my);
        }
        n += pts.len();
        groups += 1;
    }
    if !(sxx > 1e-12) {
        return Err(ScalingError::Calibration {
            axis: "isotopes",
            detail: "no spin series contains two isotopes with different |g|".into(),
        });
    }
    let beta = sxy / sxx;
    let mut chi2 = 0.0;
    for ((_, pts), (_, mx, my)) in series.iter().zip(&means) {
        for (x, y) in pts {
            chi2 += (y - my - beta * (x - mx)).powi(2);
        }
    }
    let dof = n.saturating_sub(groups + 1);
    let stderr = if dof > 0 {
        (chi2 / dof as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(GStage {
        g_exponent: beta,
        g_exponent_stderr: stderr,
        b: means
            .iter()
            .map(|&(spin, mx, my)| (spin, (my - beta * mx).exp()))
            .collect(),
    })
}

/// All three stages: density, g-factor, then nuclear spin.
pub fn calibrate_constants(
    dataset: &[CalibrationPoint],
) -> Result<CalibrationReport, ScalingError> {
    let stages = calibrate_density_stage(dataset)?;
    if stages.len() < 4 {
        return Err(ScalingError::Calibration {
            axis: "isotopes",
            detail: format!("{} isotopes given, need 4", stages.len()),
        });
    }
    let g = calibrate_g_stage(&stages)?;
    if g.b.len() < 2 {
        return Err(ScalingError::Calibration {
            axis: "nuclear spins",
            detail: "all isotopes share one spin value".into(),
        });
    }
    let points: Vec<PowerPoint> =
        g.b.iter()
            .map(|&(spin, b)| (spin.value(), b, None))
            .collect();
    let spin_fit = power_law_regression(&points)?;
    Ok(CalibrationReport {
        constants: ScalingConstants {
            c: spin_fit.coefficient,
            g_exponent: g.g_exponent,
            i_exponent: spin_fit.exponent,
            n_exponent: -1.0,
            ge_exponent: ScalingConstants::default().ge_exponent,
        },
        stderr_c: spin_fit.stderr_coefficient,
        stderr_g_exponent: g.g_exponent_stderr,
        stderr_i_exponent: spin_fit.stderr_exponent,
        per_isotope: stages,
        per_spin: g.b,
    })
}
