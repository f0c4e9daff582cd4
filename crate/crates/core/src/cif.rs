//! A pragmatic subset of CIF 1.1: cell parameters, symmetry operations and atom sites.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedMul, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::{wrap_unit, BathError, CrystalCell, CrystalSite};
use crate::isotopes::{DensityMap, ELEMENT_SYMBOLS};

/// Fractional tolerance for merging symmetry images.
pub const DEDUP_TOLERANCE: f64 = 1e-3;
/// Å⁻³ to cm⁻³.
pub const PER_A3_TO_PER_CM3: f64 = 1e24;

const SYMOP_TAGS: [&str; 2] = [
    "_symmetry_equiv_pos_as_xyz",
    "_space_group_symop_operation_xyz",
];
const CELL_TAGS: [&str; 6] = [
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
];
// Keeps rational arithmetic on symmetry ops far from i64 overflow.
const MAX_RATIONAL_PART: i64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CifError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("missing required tag {0}")]
    MissingTag(String),
    #[error("tag {tag}: cannot read number from '{value}'")]
    BadNumber { tag: String, value: String },
    #[error("bad symmetry operation '{op}': {reason}")]
    SymmetryOp { op: String, reason: String },
    #[error("unknown element in atom site '{0}'")]
    UnknownElement(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Cell(#[from] BathError),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Data(String),
    Loop,
    Tag(String),
    Value(String),
}

/// Splits CIF text into tokens tagged with their line numbers.
fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, CifError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        if let Some(first) = line.strip_prefix(';') {
            let mut field = first.to_string();
            let mut closed = false;
            for (_, next) in lines.by_ref() {
                if next.starts_with(';') {
                    closed = true;
                    break;
                }
                field.push('\n');
                field.push_str(next);
            }
            if !closed {
                return Err(CifError::Syntax {
                    line: line_no,
                    reason: "unterminated text field".into(),
                });
            }
            out.push((Token::Value(field.trim().to_string()), line_no));
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let ch = chars[i];
            if ch.is_whitespace() {
                i += 1;
                continue;
            }
            if ch == '#' {
                break;
            }
            if ch == '\'' || ch == '"' {
                // A quote closes only when followed by whitespace or end of line.
                let mut j = i + 1;
                loop {
                    if j >= chars.len() {
                        return Err(CifError::Syntax {
                            line: line_no,
                            reason: "unterminated quoted string".into(),
                        });
                    }
                    if chars[j] == ch && (j + 1 == chars.len() || chars[j + 1].is_whitespace()) {
                        break;
                    }
                    j += 1;
                }
                out.push((Token::Value(chars[i + 1..j].iter().collect()), line_no));
                i = j + 1;
                continue;
            }
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let lower = word.to_ascii_lowercase();
            let token = if lower == "loop_" {
                Token::Loop
            } else if lower.starts_with("data_") {
                Token::Data(word[5..].to_string())
            } else if word.starts_with('_') {
                Token::Tag(lower)
            } else {
                Token::Value(word)
            };
            out.push((token, line_no));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifLoop {
    pub tags: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CifLoop {
    pub fn column(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParameters {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Degrees.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CellParameters {
    pub fn volume(&self) -> f64 {
        let (ca, cb, cg) = (
            self.alpha.to_radians().cos(),
            self.beta.to_radians().cos(),
            self.gamma.to_radians().cos(),
        );
        let s = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
        self.a * self.b * self.c * s.max(0.0).sqrt()
    }

    /// Lattice vectors as rows: a along x, b in the xy plane.
    pub fn lattice_vectors(&self) -> Result<[[f64; 3]; 3], CifError> {
        let v = self.volume();
        if !(v > 0.0) || !v.is_finite() || self.a <= 0.0 || self.b <= 0.0 || self.c <= 0.0 {
            return Err(CifError::Validation(format!(
                "cell parameters {self:?} do not span a positive volume"
            )));
        }
        let (ca, cb) = (self.alpha.to_radians().cos(), self.beta.to_radians().cos());
        let (sg, cg) = self.gamma.to_radians().sin_cos();
        let cy = self.c * (ca - cb * cg) / sg;
        let cz = v / (self.a * self.b * sg);
        Ok([
            [self.a, 0.0, 0.0],
            [self.b * cg, self.b * sg, 0.0],
            [self.c * cb, cy, cz],
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSite {
    pub label: String,
    pub element: String,
    pub frac: [f64; 3],
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifDocument {
    pub data_block_name: String,
    pub scalars: BTreeMap<String, String>,
    pub loops: Vec<CifLoop>,
    pub symmetry_ops: Vec<String>,
    pub cell: CellParameters,
    pub atom_sites: Vec<AtomSite>,
}

/// Reads a CIF number, dropping a trailing standard uncertainty such as "(3)".
pub fn parse_cif_number(value: &str) -> Option<f64> {
    let core = match value.find('(') {
        Some(i) if value.ends_with(')') => &value[..i],
        Some(_) => return None,
        None => value,
    };
    let x: f64 = core.parse().ok()?;
    x.is_finite().then_some(x)
}

/// Element symbol from a CIF type symbol or label ("O2-", "Si1", "ce" → "O", "Si", "Ce").
pub fn element_from_symbol(symbol: &str) -> Option<String> {
    let letters: String = symbol
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    for len in [2, 1] {
        if letters.len() < len {
            continue;
        }
        let mut cand = letters[..len].to_ascii_lowercase();
        cand[..1].make_ascii_uppercase();
        if ELEMENT_SYMBOLS.contains(&cand.as_str()) {
            return Some(cand);
        }
    }
    None
}

fn number(scalars: &BTreeMap<String, String>, tag: &str) -> Result<f64, CifError> {
    let value = scalars
        .get(tag)
        .ok_or_else(|| CifError::MissingTag(tag.to_string()))?;
    parse_cif_number(value).ok_or_else(|| CifError::BadNumber {
        tag: tag.to_string(),
        value: value.clone(),
    })
}

/// Parses the first data block of `text`.
pub fn parse_cif(text: &str) -> Result<CifDocument, CifError> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let mut name = None;
    if let Some((token, line)) = tokens.first() {
        let Token::Data(n) = token else {
            return Err(CifError::Syntax {
                line: *line,
                reason: "content before the first data_ block".into(),
            });
        };
        name = Some(n.clone());
        pos = 1;
    }
    let data_block_name = name.ok_or(CifError::Syntax {
        line: 1,
        reason: "no data_ block".into(),
    })?;

    let mut scalars = BTreeMap::new();
    let mut loops = Vec::new();
    while pos < tokens.len() {
        let (tok, line) = &tokens[pos];
        match tok {
            Token::Data(_) => break,
            Token::Tag(tag) => {
                match tokens.get(pos + 1) {
                    Some((Token::Value(v), _)) => {
                        scalars.insert(tag.clone(), v.clone());
                    }
                    _ => {
                        return Err(CifError::Syntax {
                            line: *line,
                            reason: format!("tag {tag} has no value"),
                        })
                    }
                }
                pos += 2;
            }
            Token::Loop => {
                pos += 1;
                let mut tags = Vec::new();
                while let Some((Token::Tag(t), _)) = tokens.get(pos) {
                    tags.push(t.clone());
                    pos += 1;
                }
                if tags.is_empty() {
                    return Err(CifError::Syntax {
                        line: *line,
                        reason: "loop_ without tags".into(),
                    });
                }
                let mut values = Vec::new();
                let mut last_line = *line;
                while let Some((Token::Value(v), l)) = tokens.get(pos) {
                    values.push(v.clone());
                    last_line = *l;
                    pos += 1;
                }
                if values.len() % tags.len() != 0 {
                    return Err(CifError::Syntax {
                        line: last_line,
                        reason: format!(
                            "unterminated loop: {} values for {} columns",
                            values.len(),
                            tags.len()
                        ),
                    });
                }
                let rows = values.chunks(tags.len()).map(|c| c.to_vec()).collect();
                loops.push(CifLoop { tags, rows });
            }
            Token::Value(v) => {
                return Err(CifError::Syntax {
                    line: *line,
                    reason: format!("value '{v}' without a tag"),
                })
            }
        }
    }

    let cell = CellParameters {
        a: number(&scalars, CELL_TAGS[0])?,
        b: number(&scalars, CELL_TAGS[1])?,
        c: number(&scalars, CELL_TAGS[2])?,
        alpha: number(&scalars, CELL_TAGS[3])?,
        beta: number(&scalars, CELL_TAGS[4])?,
        gamma: number(&scalars, CELL_TAGS[5])?,
    };

    let mut symmetry_ops = Vec::new();
    for lp in &loops {
        if let Some(col) = SYMOP_TAGS.iter().find_map(|t| lp.column(t)) {
            symmetry_ops.extend(lp.rows.iter().map(|r| r[col].clone()));
        }
    }
    for tag in SYMOP_TAGS {
        if let Some(op) = scalars.get(tag) {
            symmetry_ops.push(op.clone());
        }
    }

    let site_loop = loops
        .iter()
        .find(|l| l.column("_atom_site_fract_x").is_some())
        .ok_or_else(|| CifError::MissingTag("_atom_site_fract_x".into()))?;
    let col = |t: &str| site_loop.column(t);
    let fract = [
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
    ];
    let fcols: Vec<usize> = fract
        .iter()
        .map(|t| col(t).ok_or_else(|| CifError::MissingTag(t.to_string())))
        .collect::<Result<_, _>>()?;
    let type_col = col("_atom_site_type_symbol");
    let label_col = col("_atom_site_label");
    if type_col.is_none() && label_col.is_none() {
        return Err(CifError::MissingTag("_atom_site_type_symbol".into()));
    }
    let occ_col = col("_atom_site_occupancy");
    let mut atom_sites = Vec::new();
    for row in &site_loop.rows {
        let symbol = type_col
            .or(label_col)
            .map(|c| row[c].as_str())
            .unwrap_or_default();
        let label = label_col.map_or(symbol, |c| row[c].as_str()).to_string();
        let element = element_from_symbol(symbol)
            .ok_or_else(|| CifError::UnknownElement(symbol.to_string()))?;
        let mut frac = [0.0; 3];
        for k in 0..3 {
            frac[k] = parse_cif_number(&row[fcols[k]]).ok_or_else(|| CifError::BadNumber {
                tag: fract[k].to_string(),
                value: row[fcols[k]].clone(),
            })?;
        }
        let occupancy = match occ_col.map(|c| row[c].as_str()) {
            None | Some("?") | Some(".") => 1.0,
            Some(v) => parse_cif_number(v).ok_or_else(|| CifError::BadNumber {
                tag: "_atom_site_occupancy".into(),
                value: v.to_string(),
            })?,
        };
        if !(occupancy > 0.0 && occupancy <= 1.0 + 1e-9) {
            return Err(CifError::Validation(format!(
                "site {label} has occupancy {occupancy}"
            )));
        }
        atom_sites.push(AtomSite {
            label,
            element,
            frac,
            occupancy: occupancy.min(1.0),
        });
    }

    Ok(CifDocument {
        data_block_name,
        scalars,
        loops,
        symmetry_ops,
        cell,
        atom_sites,
    })
}

/// An affine map on fractional coordinates with exact rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryOp {
    pub rotation: [[Rational64; 3]; 3],
    pub translation: [Rational64; 3],
}

fn parse_rational(s: &str) -> Option<Rational64> {
    let bounded = |v: i64| (v.abs() <= MAX_RATIONAL_PART).then_some(v);
    if let Some((n, d)) = s.split_once('/') {
        let n = bounded(n.parse().ok()?)?;
        let d = bounded(d.parse().ok()?)?;
        return (d != 0).then(|| Rational64::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.len() > 6 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let int: i64 = if int.is_empty() {
            0
        } else {
            bounded(int.parse().ok()?)?
        };
        let den = 10i64.pow(frac.len() as u32);
        let num: i64 = if frac.is_empty() {
            0
        } else {
            frac.parse().ok()?
        };
        return Some(Rational64::from_integer(int) + Rational64::new(num, den));
    }
    Some(Rational64::from_integer(bounded(s.parse().ok()?)?))
}

fn parse_component(expr: &str) -> Option<([Rational64; 3], Rational64)> {
    let s: String = expr
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    if s.is_empty() {
        return None;
    }
    let mut coef = [Rational64::zero(); 3];
    let mut constant = Rational64::zero();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let mut sign = Rational64::from_integer(1);
        if bytes[i] == b'+' || bytes[i] == b'-' {
            if bytes[i] == b'-' {
                sign = -sign;
            }
            i += 1;
        }
        let start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.' || bytes[i] == b'/')
        {
            i += 1;
        }
        let number = &s[start..i];
        if i < bytes.len() && bytes[i] == b'*' {
            i += 1;
        }
        let var = match bytes.get(i) {
            Some(b'x') => Some(0),
            Some(b'y') => Some(1),
            Some(b'z') => Some(2),
            _ => None,
        };
        let value = if number.is_empty() {
            var?;
            Rational64::from_integer(1)
        } else {
            parse_rational(number)?
        };
        let term = sign.checked_mul(&value)?;
        match var {
            Some(k) => {
                i += 1;
                // "x/2" style divisor after the variable
                let mut term = term;
                if bytes.get(i) == Some(&b'/') {
                    let ds = i + 1;
                    let mut de = ds;
                    while de < bytes.len() && bytes[de].is_ascii_digit() {
                        de += 1;
                    }
                    let d = parse_rational(&s[ds..de])?;
                    if d.is_zero() {
                        return None;
                    }
                    term = term.checked_mul(&d.recip())?;
                    i = de;
                }
                coef[k] = coef[k].checked_add(&term)?;
            }
            None => {
                if number.is_empty() {
                    return None;
                }
                constant = constant.checked_add(&term)?;
            }
        }
        if i < bytes.len() && bytes[i] != b'+' && bytes[i] != b'-' {
            return None;
        }
        if coef
            .iter()
            .chain([&constant])
            .any(|r| r.numer().abs() > MAX_RATIONAL_PART * MAX_RATIONAL_PART)
        {
            return None;
        }
    }
    Some((coef, constant))
}

impl SymmetryOp {
    pub fn identity() -> Self {
        let one = Rational64::from_integer(1);
        let zero = Rational64::zero();
        SymmetryOp {
            rotation: [[one, zero, zero], [zero, one, zero], [zero, zero, one]],
            translation: [zero; 3],
        }
    }

    pub fn parse(op: &str) -> Result<Self, CifError> {
        let err = |reason: &str| CifError::SymmetryOp {
            op: op.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = op.split(',').collect();
        if parts.len() != 3 {
            return Err(err("expected three comma-separated components"));
        }
        let mut rotation = [[Rational64::zero(); 3]; 3];
        let mut translation = [Rational64::zero(); 3];
        for (k, part) in parts.iter().enumerate() {
            let (row, t) = parse_component(part)
                .ok_or_else(|| err(&format!("cannot read '{}'", part.trim())))?;
            rotation[k] = row;
            translation[k] = t;
        }
        Ok(SymmetryOp {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, frac: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.translation[k].to_f64().unwrap_or(0.0)
                + (0..3)
                    .map(|j| self.rotation[k][j].to_f64().unwrap_or(0.0) * frac[j])
                    .sum::<f64>();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizedStructure {
    pub name: String,
    pub parameters: CellParameters,
    pub cell: CrystalCell,
    /// Å³.
    pub volume: f64,
    pub formula_units: u32,
}

fn same_position(a: &[f64; 3], b: &[f64; 3]) -> bool {
    (0..3).all(|k| {
        let d = a[k] - b[k];
        (d - d.round()).abs() < DEDUP_TOLERANCE
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Expands every atom site by every symmetry operation into a P1 cell.
pub fn realize_structure(doc: &CifDocument) -> Result<RealizedStructure, CifError> {
    let ops: Vec<SymmetryOp> = if doc.symmetry_ops.is_empty() {
        vec![SymmetryOp::identity()]
    } else {
        doc.symmetry_ops
            .iter()
            .map(|s| SymmetryOp::parse(s))
            .collect::<Result<_, _>>()?
    };
    let mut sites: Vec<CrystalSite> = Vec::new();
    for atom in &doc.atom_sites {
        for op in &ops {
            let frac = op.apply(&atom.frac).map(wrap_unit);
            let dup = sites.iter().any(|s| {
                s.element == atom.element
                    && s.occupancy == atom.occupancy
                    && same_position(&s.frac, &frac)
            });
            if !dup {
                sites.push(CrystalSite {
                    element: atom.element.clone(),
                    frac,
                    occupancy: atom.occupancy,
                });
            }
        }
    }
    // Shared positions are allowed only as a partial-occupancy mixture.
    for (i, s) in sites.iter().enumerate() {
        let total: f64 = sites
            .iter()
            .enumerate()
            .filter(|(j, t)| *j != i && same_position(&s.frac, &t.frac))
            .map(|(_, t)| t.occupancy)
            .sum::<f64>()
            + s.occupancy;
        if total > 1.0 + 1e-6 {
            return Err(CifError::Validation(format!(
                "sites collide at ({:.4}, {:.4}, {:.4}) with total occupancy {total:.3}",
                s.frac[0], s.frac[1], s.frac[2]
            )));
        }
    }
    let lattice = doc.cell.lattice_vectors()?;
    let cell = CrystalCell::new(lattice, sites)?;

    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for s in cell.sites() {
        *counts.entry(s.element.as_str()).or_default() += s.occupancy;
    }
    let integral = counts
        .values()
        .all(|c| (c - c.round()).abs() < 1e-6 && *c >= 1.0);
    let formula_units = if integral {
        counts
            .values()
            .map(|c| c.round() as u64)
            .fold(0, gcd)
            .max(1) as u32
    } else {
        1
    };
    Ok(RealizedStructure {
        name: doc.data_block_name.clone(),
        parameters: doc.cell,
        volume: doc.cell.volume(),
        cell,
        formula_units,
    })
}

/// Parses and realizes in one step.
pub fn structure_from_cif(text: &str) -> Result<RealizedStructure, CifError> {
    realize_structure(&parse_cif(text)?)
}

impl RealizedStructure {
    /// Atoms per cell by element (occupancy-weighted).
    pub fn composition(&self) -> BTreeMap<String, f64> {
        let mut counts = BTreeMap::new();
        for s in self.cell.sites() {
            *counts.entry(s.element.clone()).or_insert(0.0) += s.occupancy;
        }
        counts
    }

    /// Formula per formula unit, elements in alphabetical order ("O2Si").
    pub fn reduced_formula(&self) -> String {
        let mut out = String::new();
        for (el, n) in self.composition() {
            let per = n / self.formula_units as f64;
            out.push_str(&el);
            if (per - 1.0).abs() > 1e-9 {
                if (per - per.round()).abs() < 1e-9 {
                    let _ = write!(out, "{}", per.round() as i64);
                } else {
                    let _ = write!(out, "{per}");
                }
            }
        }
        out
    }

    /// The structure repeated n₁×n₂×n₃ times.
    pub fn supercell(&self, reps: [u32; 3]) -> Result<RealizedStructure, CifError> {
        if reps.contains(&0) {
            return Err(CifError::Validation(
                "supercell repetitions must be positive".into(),
            ));
        }
        let mut sites = Vec::new();
        for i in 0..reps[0] {
            for j in 0..reps[1] {
                for k in 0..reps[2] {
                    for s in self.cell.sites() {
                        let shift = [i, j, k];
                        let mut frac = [0.0; 3];
                        for d in 0..3 {
                            frac[d] = (s.frac[d] + shift[d] as f64) / reps[d] as f64;
                        }
                        sites.push(CrystalSite { frac, ..s.clone() });
                    }
                }
            }
        }
        let parameters = CellParameters {
            a: self.parameters.a * reps[0] as f64,
            b: self.parameters.b * reps[1] as f64,
            c: self.parameters.c * reps[2] as f64,
            ..self.parameters
        };
        let cell = CrystalCell::new(parameters.lattice_vectors()?, sites)?;
        let n = reps.iter().product::<u32>();
        Ok(RealizedStructure {
            name: self.name.clone(),
            parameters,
            volume: parameters.volume(),
            cell,
            formula_units: self.formula_units * n,
        })
    }

    /// Serializes as a P1 CIF with explicit sites.
    pub fn to_p1_cif(&self) -> String {
        let p = &self.parameters;
        let mut out = format!("data_{}\n", self.name);
        for (tag, v) in CELL_TAGS
            .iter()
            .zip([p.a, p.b, p.c, p.alpha, p.beta, p.gamma])
        {
            let _ = writeln!(out, "{tag} {v:?}");
        }
        out.push_str("loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n");
        out.push_str("loop_\n_atom_site_label\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n_atom_site_occupancy\n");
        for (i, s) in self.cell.sites().iter().enumerate() {
            let _ = writeln!(
                out,
                "{}{} {} {:?} {:?} {:?} {:?}",
                s.element,
                i + 1,
                s.element,
                s.frac[0],
                s.frac[1],
                s.frac[2],
                s.occupancy
            );
        }
        out
    }
}

/// Occupancy-weighted number density of each element, cm⁻³.
pub fn element_densities(structure: &RealizedStructure) -> DensityMap {
    structure
        .composition()
        .into_iter()
        .map(|(el, n)| (el, n / structure.volume * PER_A3_TO_PER_CM3))
        .collect()
}
