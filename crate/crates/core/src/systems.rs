//! Builtin example systems.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::expr::{parse, Expr};
use crate::system::{ExprMatrix, Kind, SystemDef};
use crate::{Error, Result};

pub const NAMES: [&str; 6] = [
    "vertical_disk",
    "free_particle",
    "chaplygin_sphere",
    "snakeboard",
    "chaplygin_sleigh",
    "iliyev",
];

/// A second-stage reduction known to work for an entry.
#[derive(Clone, Debug, PartialEq)]
pub struct KnownReduction {
    pub cyclic: Vec<String>,
    pub lambda: Vec<f64>,
    /// Multiplier on the reduced space, when it has a closed form.
    pub multiplier: Option<Expr>,
    /// Closed-form density used to fix the scale of a quadrature multiplier.
    pub reference_density: Option<Expr>,
}

/// A named statement about an entry, checked by the test suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Fact {
    pub name: &'static str,
    pub statement: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub def: SystemDef,
    pub multiplier: Option<Expr>,
    pub measure: Option<Expr>,
    pub reduction: Option<KnownReduction>,
    pub facts: Vec<Fact>,
}

fn e(s: &str) -> Expr {
    parse(s).expect("valid builtin expression")
}

fn domain(def: &mut SystemDef, spans: &[(&str, f64, f64)]) {
    for (n, lo, hi) in spans {
        def.domain.insert(n.to_string(), (*lo, *hi));
    }
}

pub fn vertical_disk() -> RegistryEntry {
    let mut d = SystemDef::new("vertical_disk", Kind::Chaplygin, &["theta", "phi"], &["x", "y"], 0);
    for (k, v) in [("m", 1.0), ("R", 1.0), ("I", 0.5), ("J", 0.25)] {
        d.parameters.insert(k.into(), v);
    }
    d.g_shape = ExprMatrix::from_strs(&[&["I", "0"], &["0", "J"]]);
    d.g_group = ExprMatrix::from_strs(&[&["m", "0"], &["0", "m"]]);
    d.connection = ExprMatrix::from_strs(&[&["-R*cos(phi)", "0"], &["-R*sin(phi)", "0"]]);
    domain(&mut d, &[("theta", -PI, PI), ("phi", -PI, PI), ("x", -2.0, 2.0), ("y", -2.0, 2.0)]);
    RegistryEntry {
        name: "vertical_disk",
        def: d,
        multiplier: Some(e("1")),
        measure: Some(e("1")),
        reduction: None,
        facts: vec![
            Fact {
                name: "k_vanish",
                statement: "every K^γ_{βα} vanishes",
            },
            Fact {
                name: "variational",
                statement: "L_V = -m(xd^2+yd^2)/2 + I thd^2/2 + J phd^2/2 + m R thd (xd cos phi + yd sin phi)",
            },
        ],
    }
}

pub fn free_particle() -> RegistryEntry {
    let mut d = SystemDef::new("free_particle", Kind::Chaplygin, &["x", "y"], &["z"], 0);
    d.connection = ExprMatrix::from_strs(&[&["0", "x"]]);
    domain(&mut d, &[("x", -2.0, 2.0), ("y", -2.0, 2.0), ("z", -2.0, 2.0)]);
    RegistryEntry {
        name: "free_particle",
        def: d,
        multiplier: Some(e("(1+x^2)^(-1/2)")),
        measure: Some(e("(1+x^2)^(-1/2)")),
        reduction: None,
        facts: vec![
            Fact {
                name: "multiplier",
                statement: "f = (1+x^2)^(-1/2)",
            },
            Fact {
                name: "k",
                statement: "K^2_{12} = x/(1+x^2), K^1_{12} = 0",
            },
        ],
    }
}

/// Rolling-ball density det(J)^{-1/2}, J = diag(I+1) − γγᵀ, γ the vertical in the body frame.
fn sphere_density() -> Expr {
    e("((I1+1)*(I2+1)*(I3+1)*(1 - sin(theta)^2*sin(phi)^2/(I1+1) - sin(theta)^2*cos(phi)^2/(I2+1) - cos(theta)^2/(I3+1)))^(-1/2)")
}

pub fn chaplygin_sphere_with(i1: f64, i2: f64, i3: f64) -> RegistryEntry {
    let mut d = SystemDef::new("chaplygin_sphere", Kind::Chaplygin, &["theta", "phi", "psi"], &["x", "y"], 0);
    for (k, v) in [("I1", i1), ("I2", i2), ("I3", i3)] {
        d.parameters.insert(k.into(), v);
    }
    d.g_shape = ExprMatrix::from_strs(&[
        &["I1*cos(phi)^2 + I2*sin(phi)^2", "0", "(I1 - I2)*sin(phi)*cos(phi)*sin(theta)"],
        &["0", "I3", "I3*cos(theta)"],
        &[
            "(I1 - I2)*sin(phi)*cos(phi)*sin(theta)",
            "I3*cos(theta)",
            "(I1*sin(phi)^2 + I2*cos(phi)^2)*sin(theta)^2 + I3*cos(theta)^2",
        ],
    ]);
    d.connection = ExprMatrix::from_strs(&[
        &["-sin(psi)", "cos(psi)*sin(theta)", "0"],
        &["cos(psi)", "sin(psi)*sin(theta)", "0"],
    ]);
    domain(
        &mut d,
        &[("theta", 0.3, PI - 0.3), ("phi", -PI, PI), ("psi", -PI, PI), ("x", -2.0, 2.0), ("y", -2.0, 2.0)],
    );
    RegistryEntry {
        name: "chaplygin_sphere",
        def: d,
        multiplier: None,
        measure: None,
        reduction: Some(KnownReduction {
            cyclic: vec!["psi".into()],
            lambda: vec![1.0],
            multiplier: None,
            reference_density: Some(sphere_density()),
        }),
        facts: vec![
            Fact {
                name: "no_three_dof_multiplier",
                statement: "the converse condition fails on the 3-DOF system",
            },
            Fact {
                name: "reduced_bracket",
                statement: "{P'_1,P'_2} = -lambda (I3+1) f^3 sin(theta) (I1 cos^2 phi + I2 sin^2 phi + 1)",
            },
        ],
    }
}

pub fn chaplygin_sphere() -> RegistryEntry {
    chaplygin_sphere_with(1.0, 2.0, 3.0)
}

pub fn snakeboard() -> RegistryEntry {
    let mut d = SystemDef::new("snakeboard", Kind::Chaplygin, &["theta", "phi", "psi"], &["x", "y"], 0);
    d.g_shape = ExprMatrix::from_strs(&[&["1", "0", "1"], &["0", "2", "0"], &["1", "0", "1"]]);
    d.connection = ExprMatrix::from_strs(&[&["cot(phi)*cos(theta)", "0", "0"], &["cot(phi)*sin(theta)", "0", "0"]]);
    domain(
        &mut d,
        &[("theta", -PI, PI), ("phi", 0.1, FRAC_PI_2 - 0.1), ("psi", -PI, PI), ("x", -2.0, 2.0), ("y", -2.0, 2.0)],
    );
    RegistryEntry {
        name: "snakeboard",
        def: d,
        multiplier: None,
        measure: None,
        reduction: Some(KnownReduction {
            cyclic: vec!["psi".into()],
            lambda: vec![0.5],
            multiplier: Some(e("tan(phi)")),
            reference_density: None,
        }),
        facts: vec![
            Fact {
                name: "equations",
                statement: "thd = tan^2 phi (p_th - p_psi), dp_th = -sec phi csc phi (p_th - p_psi) p_phi / 2",
            },
            Fact {
                name: "reduced_bracket",
                statement: "{P'_1,P'_2} = sec^2 phi lambda",
            },
        ],
    }
}

pub fn chaplygin_sleigh() -> RegistryEntry {
    let mut d = SystemDef::new("chaplygin_sleigh", Kind::Eps, &[], &["x", "y", "theta"], 2);
    d.g_group = ExprMatrix::from_strs(&[&["1", "0", "0"], &["0", "1", "1"], &["0", "1", "2"]]);
    d.body_basis = ExprMatrix::from_strs(&[&["1", "0"], &["0", "0"], &["0", "1"]]);
    d.structure.set_pair(1, 0, 2, -1.0);
    d.structure.set_pair(0, 1, 2, 1.0);
    d.group_frame = ExprMatrix::from_strs(&[
        &["cos(theta)", "-sin(theta)", "0"],
        &["sin(theta)", "cos(theta)", "0"],
        &["0", "0", "1"],
    ]);
    domain(&mut d, &[("x", -2.0, 2.0), ("y", -2.0, 2.0), ("theta", -PI, PI)]);
    RegistryEntry {
        name: "chaplygin_sleigh",
        def: d,
        multiplier: Some(e("1")),
        measure: None,
        reduction: None,
        facts: vec![
            Fact {
                name: "structure",
                statement: "C^2_{13} = -1 = -C^1_{23}",
            },
            Fact {
                name: "no_measure",
                statement: "no invariant measure, yet f = const Hamiltonizes",
            },
        ],
    }
}

pub fn iliyev() -> RegistryEntry {
    let mut d = SystemDef::new("iliyev", Kind::Chaplygin, &["q1", "q2", "q3"], &["q4", "q5"], 0);
    d.connection = ExprMatrix::from_strs(&[&["0", "-tan(q1)", "0"], &["0", "0", "-tan(q1)"]]);
    domain(
        &mut d,
        &[("q1", -1.2, 1.2), ("q2", -2.0, 2.0), ("q3", -2.0, 2.0), ("q4", -2.0, 2.0), ("q5", -2.0, 2.0)],
    );
    RegistryEntry {
        name: "iliyev",
        def: d,
        multiplier: Some(e("cos(q1)")),
        measure: Some(e("cos(q1)^2")),
        reduction: None,
        facts: vec![Fact {
            name: "measure",
            statement: "N = cos^2(q1) = f^(m-1)",
        }],
    }
}

/// Looks up a builtin by name.
pub fn get(name: &str) -> Result<RegistryEntry> {
    match name {
        "vertical_disk" => Ok(vertical_disk()),
        "free_particle" => Ok(free_particle()),
        "chaplygin_sphere" => Ok(chaplygin_sphere()),
        "snakeboard" => Ok(snakeboard()),
        "chaplygin_sleigh" => Ok(chaplygin_sleigh()),
        "iliyev" => Ok(iliyev()),
        _ => Err(Error::Config(format!(
            "unknown system `{name}`; available: {}",
            NAMES.join(", ")
        ))),
    }
}

pub fn all() -> Vec<RegistryEntry> {
    NAMES.iter().map(|n| get(n).expect("registered")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;

    #[test]
    fn every_entry_validates_and_round_trips() {
        for entry in all() {
            entry.def.validate().unwrap();
            let text = entry.def.to_toml();
            let back = SystemDef::from_toml(&text).unwrap();
            assert_eq!(back, entry.def, "{}", entry.name);
        }
    }

    #[test]
    fn unknown_name_lists_registry() {
        let err = get("rattleback").unwrap_err();
        assert!(err.to_string().contains("snakeboard"));
    }

    #[test]
    fn sleigh_structure_constants() {
        let s = chaplygin_sleigh().def.structure;
        assert_eq!(s.get(1, 0, 2), -1.0);
        assert_eq!(s.get(0, 1, 2), 1.0);
        let nonzero = s.entries();
        assert_eq!(nonzero.len(), 2);
    }

    #[test]
    fn snakeboard_kinetic_matrix() {
        let g = Geometry::new(&snakeboard().def).unwrap();
        let phi: f64 = 0.7;
        let k = g.kinetic(&[0.3, phi, 0.1, 0.0, 0.0]).unwrap();
        let csc2 = 1.0 / phi.sin().powi(2);
        assert!((k.g_shape[(0, 0)] - csc2).abs() < 1e-14);
        assert_eq!(k.g_shape[(0, 2)], 1.0);
        assert_eq!(k.g_shape[(1, 1)], 2.0);
    }

    #[test]
    fn sphere_reference_density_values() {
        let d = chaplygin_sphere();
        let f = d.def.bind_parameters(&d.reduction.unwrap().reference_density.unwrap());
        let at = |t: f64, p: f64| f.eval_at(&["theta", "phi"], &[t, p]).unwrap();
        assert!((at(0.7, 0.4) - 0.24312108).abs() < 1e-8);
        assert!((at(1.2, 2.0) - 0.27328550).abs() < 1e-8);
    }
}
