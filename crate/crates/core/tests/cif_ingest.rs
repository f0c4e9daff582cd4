use std::path::Path;

use proptest::prelude::*;
use spinbath::cif::{element_densities, parse_cif, structure_from_cif, CifError, SymmetryOp};

fn fixture(name: &str) -> String {
    std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name),
    )
    .unwrap()
}

const CUBE: &str = "data_cube
_cell_length_a 10
_cell_length_b 10
_cell_length_c 10
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
loop_
_atom_site_label
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
_atom_site_occupancy
C1 0 0 0 1
";

fn count(structure: &spinbath::RealizedStructure, element: &str) -> usize {
    structure
        .cell
        .sites()
        .iter()
        .filter(|s| s.element == element)
        .count()
}

#[test]
fn minimal_p1_cube() {
    let doc = parse_cif(CUBE).unwrap();
    assert!(doc.symmetry_ops.is_empty());
    let s = structure_from_cif(CUBE).unwrap();
    assert_eq!(s.cell.sites().len(), 1);
    assert!((s.volume - 1000.0).abs() < 1e-9);
    let n = element_densities(&s);
    assert!((n["C"] - 1e21).abs() < 1e9);
}

#[test]
fn half_occupancy_counts_half() {
    let s = structure_from_cif(&CUBE.replace("C1 0 0 0 1", "C1 0 0 0 0.5")).unwrap();
    assert!((element_densities(&s)["C"] - 0.5e21).abs() < 1e9);
}

#[test]
fn missing_cell_length_is_named() {
    let text = CUBE.replace("_cell_length_a 10\n", "");
    match structure_from_cif(&text) {
        Err(e) => assert!(e.to_string().contains("_cell_length_a"), "{e}"),
        Ok(_) => panic!("accepted a CIF without _cell_length_a"),
    }
}

#[test]
fn diamond_expands_to_eight_sites() {
    let s = structure_from_cif(&fixture("diamond.cif")).unwrap();
    assert_eq!(count(&s, "C"), 8);
    let v = 3.567f64.powi(3);
    assert!((s.volume - v).abs() < 1e-6 * v);
    let n = element_densities(&s)["C"];
    assert!((n / (8.0 / v * 1e24) - 1.0).abs() < 1e-12);
    assert!((n - 1.763e23).abs() < 0.001e23);
}

#[test]
fn quartz_expands_to_three_formula_units() {
    let s = structure_from_cif(&fixture("SiO2.cif")).unwrap();
    assert_eq!(count(&s, "Si"), 3);
    assert_eq!(count(&s, "O"), 6);
    let hex = 3f64.sqrt() / 2.0 * 4.913f64.powi(2) * 5.405;
    assert!((s.volume - hex).abs() < 0.01 * hex);
    assert!((s.volume - 113.0).abs() < 0.5);
    assert_eq!(s.reduced_formula(), "O2Si");
}

#[test]
fn triclinic_volume_formula() {
    let text = CUBE
        .replace("_cell_length_b 10", "_cell_length_b 7")
        .replace("_cell_length_c 10", "_cell_length_c 5")
        .replace("_cell_angle_alpha 90", "_cell_angle_alpha 80")
        .replace("_cell_angle_beta 90", "_cell_angle_beta 100")
        .replace("_cell_angle_gamma 90", "_cell_angle_gamma 110");
    let s = structure_from_cif(&text).unwrap();
    let (ca, cb, cg) = (
        80f64.to_radians().cos(),
        100f64.to_radians().cos(),
        110f64.to_radians().cos(),
    );
    let v = 350.0 * (1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg).sqrt();
    assert!((s.volume - v).abs() < 1e-9 * v);
    let lattice = s.cell.lattice();
    assert!((lattice.determinant().abs() - v).abs() < 1e-9 * v);
}

#[test]
fn symmetry_ops_are_exact_rationals() {
    let op = SymmetryOp::parse("1/2+x, -y+1/4, z-x").unwrap();
    let out = op.apply(&[0.25, 0.5, 0.75]);
    assert!((out[0] - 0.75).abs() < 1e-15);
    assert!((out[1] + 0.25).abs() < 1e-15);
    assert!((out[2] - 0.5).abs() < 1e-15);
    assert!(SymmetryOp::parse("x,y").is_err());
    assert!(SymmetryOp::parse("x,y,q").is_err());
}

#[test]
fn unknown_element_is_rejected() {
    let text = CUBE.replace("C1 0 0 0 1", "Xq1 0 0 0 1");
    assert!(matches!(
        structure_from_cif(&text),
        Err(CifError::UnknownElement(..))
    ));
}

#[test]
fn supercell_preserves_densities() {
    for name in [
        "diamond.cif",
        "SiO2.cif",
        "SiC-4H.cif",
        "ZnO.cif",
        "CeO2.cif",
    ] {
        let s = structure_from_cif(&fixture(name)).unwrap();
        let big = s.supercell([2, 2, 2]).unwrap();
        assert_eq!(big.cell.sites().len(), 8 * s.cell.sites().len());
        let (a, b) = (element_densities(&s), element_densities(&big));
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, v) in &a {
            assert!((b[k] / v - 1.0).abs() <= 1e-12, "{name} {k}");
        }
    }
}

#[test]
fn p1_reexpansion_is_idempotent() {
    for name in ["diamond.cif", "SiO2.cif", "MgO.cif", "CaO.cif"] {
        let s = structure_from_cif(&fixture(name)).unwrap();
        let again = structure_from_cif(&s.to_p1_cif()).unwrap();
        assert_eq!(again.cell.sites().len(), s.cell.sites().len(), "{name}");
        for (a, b) in s.cell.sites().iter().zip(again.cell.sites()) {
            assert_eq!(a.element, b.element);
            for k in 0..3 {
                let d = a.frac[k] - b.frac[k];
                assert!((d - d.round()).abs() < 1e-9, "{name}");
            }
        }
    }
}

#[test]
fn quoted_values_and_text_fields_parse() {
    let text = format!(
        "{}_symmetry_space_group_name_H-M 'P 1'\n_publ_section_title\n;\nmulti\nline\n;\nloop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n",
        CUBE
    );
    let s = structure_from_cif(&text).unwrap();
    assert_eq!(s.cell.sites().len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn parser_never_panics_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        let text = String::from_utf8_lossy(&bytes);
        let _ = structure_from_cif(&text);
    }

    #[test]
    fn parser_never_panics_on_mutated_fixture(pos in 0usize..2000, len in 0usize..40, junk in "[ -~\n]{0,20}") {
        let base = fixture("SiO2.cif");
        let start = pos.min(base.len());
        let end = (start + len).min(base.len());
        if base.is_char_boundary(start) && base.is_char_boundary(end) {
            let mutated = format!("{}{}{}", &base[..start], junk, &base[end..]);
            let _ = structure_from_cif(&mutated);
        }
    }

    #[test]
    fn symmetry_op_parser_never_panics(s in "[xyz0-9+\\-*/., ]{0,30}") {
        let _ = SymmetryOp::parse(&s);
    }
}
