//! Stable-isotope registry: nuclear spin, nuclear g-factor and natural abundance.
//!
//! The bundled table (`data/isotopes.csv`) lists every stable isotope from H to
//! Bi, except for Tc and Pm, which have none. The g-factor stored for each entry
//! is the signed magnetic moment per unit spin, μ/I in nuclear magnetons.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_TABLE: &str = include_str!("../data/isotopes.csv");

/// Allowed deviation of the summed natural abundances from unity, per element.
pub const ABUNDANCE_SUM_TOLERANCE: f64 = 1e-3;

const HEADER: &str = "element,Z,A,abundance_percent,spin,g_factor";

/// Chemical symbols indexed by atomic number minus one.
pub const ELEMENT_SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Atomic number of a chemical symbol, case-sensitive.
pub fn atomic_number(symbol: &str) -> Option<u32> {
    ELEMENT_SYMBOLS
        .iter()
        .position(|s| *s == symbol)
        .map(|i| i as u32 + 1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsotopeError {
    #[error("isotope table line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("isotope table: abundances of {element} sum to {sum:.5}, expected 1 within {ABUNDANCE_SUM_TOLERANCE}")]
    AbundanceSum { element: String, sum: f64 },
    #[error("isotope table: {0}")]
    Invalid(String),
    #[error("unknown element `{0}` (not in the isotope table)")]
    UnknownElement(String),
    #[error("invalid spin quantum number `{0}`")]
    InvalidSpin(String),
}

/// A nuclear spin quantum number, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Spin(u32);

impl Spin {
    pub const ZERO: Spin = Spin(0);
    pub const HALF: Spin = Spin(1);

    pub const fn from_twice(twice: u32) -> Self {
        Spin(twice)
    }

    /// Builds a spin from a float, which must be a non-negative multiple of 1/2.
    pub fn from_f64(value: f64) -> Result<Self, IsotopeError> {
        let twice = 2.0 * value;
        if !twice.is_finite() || twice < 0.0 || (twice - twice.round()).abs() > 1e-9 {
            return Err(IsotopeError::InvalidSpin(value.to_string()));
        }
        Ok(Spin(twice.round() as u32))
    }

    pub const fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Hilbert-space dimension 2I + 1.
    pub const fn multiplicity(self) -> usize {
        self.0 as usize + 1
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl FromStr for Spin {
    type Err = IsotopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || IsotopeError::InvalidSpin(s.to_string());
        match s.split_once('/') {
            Some((num, den)) => {
                let num: u32 = num.trim().parse().map_err(|_| bad())?;
                let den: u32 = den.trim().parse().map_err(|_| bad())?;
                match den {
                    1 => Ok(Spin(2 * num)),
                    2 => Ok(Spin(num)),
                    _ => Err(bad()),
                }
            }
            None => {
                let whole: u32 = s.parse().map_err(|_| bad())?;
                Ok(Spin(2 * whole))
            }
        }
    }
}

impl TryFrom<String> for Spin {
    type Error = IsotopeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Spin> for String {
    fn from(s: Spin) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isotope {
    pub element: String,
    pub mass_number: u32,
    pub spin: Spin,
    /// Signed nuclear g-factor (μ/I in units of μ_N). Zero for spinless nuclei.
    pub g_factor: f64,
    /// Natural fractional abundance in [0, 1].
    pub abundance: f64,
}

impl Isotope {
    /// Shorthand such as `13C`.
    pub fn label(&self) -> String {
        format!("{}{}", self.mass_number, self.element)
    }

    pub fn is_spinful(&self) -> bool {
        !self.spin.is_zero()
    }

    /// True when both entries describe the same nuclide.
    pub fn same_species(&self, other: &Isotope) -> bool {
        self.element == other.element && self.mass_number == other.mass_number
    }

    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.abundance) || !self.abundance.is_finite() {
            return Err(format!(
                "{}: abundance {} outside [0, 1]",
                self.label(),
                self.abundance
            ));
        }
        if !self.g_factor.is_finite() {
            return Err(format!("{}: non-finite g-factor", self.label()));
        }
        if self.spin.is_zero() && self.g_factor != 0.0 {
            return Err(format!(
                "{}: spin-0 isotope with non-zero g-factor",
                self.label()
            ));
        }
        Ok(())
    }
}

/// Parses `13C`, `C13` or `C-13` into (element, mass number).
pub fn parse_nuclide(label: &str) -> Option<(String, u32)> {
    let label = label.trim();
    let digits: String = label.chars().filter(|c| c.is_ascii_digit()).collect();
    let letters: String = label.chars().filter(|c| c.is_ascii_alphabetic()).collect();
    if digits.is_empty() || letters.is_empty() {
        return None;
    }
    let rest = label.replace(&digits, "").replace(&letters, "");
    if !(rest.is_empty() || rest == "-") {
        return None;
    }
    Some((letters, digits.parse().ok()?))
}

/// Element number densities in cm⁻³.
pub type DensityMap = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct IsotopeTable {
    entries: BTreeMap<(String, u32), Isotope>,
    atomic_numbers: BTreeMap<String, u32>,
}

impl IsotopeTable {
    /// The table compiled into the library.
    pub fn bundled() -> Self {
        load_isotope_table(BUNDLED_TABLE).expect("bundled isotope table is valid")
    }

    /// Builds a table from entries without checking that abundances sum to one.
    ///
    /// Useful for hypothetical compositions (enriched or depleted materials).
    pub fn from_isotopes_unchecked(
        isotopes: impl IntoIterator<Item = Isotope>,
    ) -> Result<Self, IsotopeError> {
        let mut table = IsotopeTable {
            entries: BTreeMap::new(),
            atomic_numbers: BTreeMap::new(),
        };
        for iso in isotopes {
            iso.validate().map_err(IsotopeError::Invalid)?;
            let z = atomic_number(&iso.element)
                .ok_or_else(|| IsotopeError::UnknownElement(iso.element.clone()))?;
            table.atomic_numbers.insert(iso.element.clone(), z);
            table
                .entries
                .insert((iso.element.clone(), iso.mass_number), iso);
        }
        Ok(table)
    }

    /// Returns a copy with every abundance transformed by `f`, skipping sum validation.
    pub fn map_abundances(&self, f: impl Fn(&Isotope) -> f64) -> Self {
        let mut out = self.clone();
        for iso in out.entries.values_mut() {
            iso.abundance = f(iso);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Isotope> {
        self.entries.values()
    }

    /// Elements in order of atomic number.
    pub fn elements(&self) -> Vec<&str> {
        let mut els: Vec<(&u32, &String)> =
            self.atomic_numbers.iter().map(|(e, z)| (z, e)).collect();
        els.sort();
        els.into_iter().map(|(_, e)| e.as_str()).collect()
    }

    pub fn contains_element(&self, element: &str) -> bool {
        self.atomic_numbers.contains_key(element)
    }

    pub fn atomic_number(&self, element: &str) -> Option<u32> {
        self.atomic_numbers.get(element).copied()
    }

    pub fn get(&self, element: &str, mass_number: u32) -> Option<&Isotope> {
        self.entries.get(&(element.to_string(), mass_number))
    }

    /// Looks up a nuclide by label such as `13C` or `Si-29`.
    pub fn find(&self, label: &str) -> Result<&Isotope, IsotopeError> {
        let (el, a) =
            parse_nuclide(label).ok_or_else(|| IsotopeError::UnknownElement(label.to_string()))?;
        self.get(&el, a)
            .ok_or_else(|| IsotopeError::UnknownElement(label.to_string()))
    }

    /// All isotopes of an element, sorted by mass number.
    pub fn isotopes_of(&self, element: &str) -> Result<Vec<&Isotope>, IsotopeError> {
        if !self.contains_element(element) {
            return Err(IsotopeError::UnknownElement(element.to_string()));
        }
        Ok(self
            .entries
            .range((element.to_string(), 0)..=(element.to_string(), u32::MAX))
            .map(|(_, iso)| iso)
            .collect())
    }

    /// Serializes back into the bundled CSV format.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&Isotope> = self.entries.values().collect();
        rows.sort_by_key(|iso| (self.atomic_numbers[&iso.element], iso.mass_number));
        let mut out = String::from(HEADER);
        out.push('\n');
        for iso in rows {
            let g = if iso.spin.is_zero() {
                "0".to_string()
            } else {
                format!("{}", iso.g_factor)
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                iso.element,
                self.atomic_numbers[&iso.element],
                iso.mass_number,
                iso.abundance * 100.0,
                iso.spin,
                g
            ));
        }
        out
    }
}

/// Parses an isotope table in the bundled CSV format and validates it.
pub fn load_isotope_table(source: &str) -> Result<IsotopeTable, IsotopeError> {
    let mut lines = source.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => {
            return Err(IsotopeError::Parse {
                line: 1,
                reason: format!("expected header `{HEADER}`"),
            })
        }
    }
    let mut isotopes = Vec::new();
    let mut atomic_numbers: BTreeMap<String, u32> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let perr = |reason: String| IsotopeError::Parse { line, reason };
        let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(perr(format!("expected 6 columns, found {}", cols.len())));
        }
        let element = cols[0].to_string();
        let z: u32 = cols[1]
            .parse()
            .map_err(|_| perr(format!("bad atomic number `{}`", cols[1])))?;
        if atomic_number(&element) != Some(z) {
            return Err(perr(format!("element `{element}` does not have Z = {z}")));
        }
        let mass_number: u32 = cols[2]
            .parse()
            .map_err(|_| perr(format!("bad mass number `{}`", cols[2])))?;
        let percent: f64 = cols[3]
            .parse()
            .map_err(|_| perr(format!("bad abundance `{}`", cols[3])))?;
        let spin: Spin = cols[4]
            .parse()
            .map_err(|e: IsotopeError| perr(e.to_string()))?;
        let g_factor: f64 = cols[5]
            .parse()
            .map_err(|_| perr(format!("bad g-factor `{}`", cols[5])))?;
        let iso = Isotope {
            element: element.clone(),
            mass_number,
            spin,
            g_factor: if spin.is_zero() { 0.0 } else { g_factor },
            abundance: percent / 100.0,
        };
        iso.validate().map_err(perr)?;
        atomic_numbers.insert(element, z);
        isotopes.push(iso);
    }

    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for iso in &isotopes {
        *sums.entry(iso.element.as_str()).or_default() += iso.abundance;
    }
    for (element, sum) in sums {
        if (sum - 1.0).abs() > ABUNDANCE_SUM_TOLERANCE {
            return Err(IsotopeError::AbundanceSum {
                element: element.to_string(),
                sum,
            });
        }
    }
    let mut table = IsotopeTable::from_isotopes_unchecked(isotopes)?;
    table.atomic_numbers = atomic_numbers;
    Ok(table)
}

/// Spinful isotopes of `element`, sorted by mass number.
pub fn spinful_isotopes_of<'t>(
    table: &'t IsotopeTable,
    element: &str,
) -> Result<Vec<&'t Isotope>, IsotopeError> {
    Ok(table
        .isotopes_of(element)?
        .into_iter()
        .filter(|iso| iso.is_spinful())
        .collect())
}

/// Per-isotope number densities (cm⁻³) for natural isotopic composition.
///
/// Spin-0 isotopes are omitted.
pub fn isotope_densities(
    table: &IsotopeTable,
    element_densities: &DensityMap,
) -> Result<Vec<(Isotope, f64)>, IsotopeError> {
    let mut out = Vec::new();
    for (element, &density) in element_densities {
        for iso in spinful_isotopes_of(table, element)? {
            out.push((iso.clone(), iso.abundance * density));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carbon_13_row() {
        let table = load_isotope_table(&format!(
            "{HEADER}\nC,6,12,98.93,0,0\nC,6,13,1.07,1/2,1.40482\n"
        ))
        .unwrap();
        let c13 = table.get("C", 13).unwrap();
        assert_eq!(c13.spin, Spin::HALF);
        assert_eq!(c13.g_factor, 1.40482);
        assert!((c13.abundance - 0.0107).abs() < 1e-15);
    }

    #[test]
    fn bundled_carbon_matches_published_moment() {
        let table = IsotopeTable::bundled();
        let c13 = table.get("C", 13).unwrap();
        // μ(13C) = 0.702412 μN, I = 1/2
        assert!((c13.g_factor - 1.40482).abs() < 1e-4);
        assert!((c13.abundance - 0.0107).abs() < 1e-4);
    }

    #[test]
    fn cerium_is_spin_free() {
        let table = IsotopeTable::bundled();
        let ce = table.isotopes_of("Ce").unwrap();
        assert_eq!(ce.len(), 4);
        assert!(ce.iter().all(|i| i.spin.is_zero() && i.g_factor == 0.0));
        assert!(spinful_isotopes_of(&table, "Ce").unwrap().is_empty());
    }

    #[test]
    fn abundance_out_of_range_is_rejected() {
        let err = load_isotope_table(&format!("{HEADER}\nC,6,13,200,1/2,1.40482\n")).unwrap_err();
        assert!(matches!(err, IsotopeError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn abundance_sum_violation_names_element() {
        let err = load_isotope_table(&format!(
            "{HEADER}\nC,6,12,90,0,0\nC,6,13,1.07,1/2,1.40482\n"
        ))
        .unwrap_err();
        match err {
            IsotopeError::AbundanceSum { element, sum } => {
                assert_eq!(element, "C");
                assert!((sum - 0.9107).abs() < 1e-12);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = load_isotope_table(&format!("{HEADER}\nH,1,1,99.9885,1/2,5.58569\nH,1,2\n"))
            .unwrap_err();
        assert!(matches!(err, IsotopeError::Parse { line: 3, .. }));
        let err =
            load_isotope_table(&format!("{HEADER}\nH,1,1,99.9885,1/3,5.58569\n")).unwrap_err();
        assert!(matches!(err, IsotopeError::Parse { line: 2, .. }));
    }

    #[test]
    fn spinful_lookup() {
        let table = IsotopeTable::bundled();
        let c: Vec<String> = spinful_isotopes_of(&table, "C")
            .unwrap()
            .iter()
            .map(|i| i.label())
            .collect();
        assert_eq!(c, vec!["13C"]);
        assert_eq!(
            spinful_isotopes_of(&table, "Tc").unwrap_err(),
            IsotopeError::UnknownElement("Tc".into())
        );
        assert!(table.isotopes_of("Pm").is_err());
    }

    #[test]
    fn densities_follow_abundance() {
        let table = IsotopeTable::bundled();
        let d =
            isotope_densities(&table, &DensityMap::from([("C".to_string(), 1.763e23)])).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].0.label(), "13C");
        assert!((d[0].1 - 1.886e21).abs() / 1.886e21 < 1e-3);

        let ce = isotope_densities(&table, &DensityMap::from([("Ce".to_string(), 1e23)])).unwrap();
        assert!(ce.is_empty());
        let zero = isotope_densities(&table, &DensityMap::from([("C".to_string(), 0.0)])).unwrap();
        assert_eq!(zero[0].1, 0.0);
        assert!(isotope_densities(&table, &DensityMap::from([("Xx".to_string(), 1.0)])).is_err());
    }

    #[test]
    fn spin_text_forms() {
        for (s, twice) in [
            ("0", 0),
            ("1/2", 1),
            ("1", 2),
            ("3/2", 3),
            ("9/2", 9),
            ("7", 14),
        ] {
            let spin: Spin = s.parse().unwrap();
            assert_eq!(spin.twice(), twice);
            assert_eq!(spin.to_string(), s);
        }
        assert!("2/3".parse::<Spin>().is_err());
        assert!("-1/2".parse::<Spin>().is_err());
    }

    #[test]
    fn nuclide_labels() {
        assert_eq!(parse_nuclide("13C"), Some(("C".into(), 13)));
        assert_eq!(parse_nuclide("Si-29"), Some(("Si".into(), 29)));
        assert_eq!(parse_nuclide("O17"), Some(("O".into(), 17)));
        assert_eq!(parse_nuclide("C"), None);
    }
}
