//! System definitions and the system-definition file format.
//!
//! Index conventions: Greek indices (α, β, ...) run over the `m` shape
//! coordinates r^α, early Latin indices (a, b, ...) over the `k` group
//! directions, and i, j, ... over the `s` directions of the body basis e_i
//! spanning the constrained vertical space. Matrices are stored row-major with
//! rows indexed first in the order written: `g_mixed[a][α] = g_{aα}`,
//! `connection[a][α] = A^a_α`, `body_basis[a][i] = e^a_i`.
//!
//! The file format is TOML:
//!
//! ```toml
//! name = "free_particle"
//! kind = "chaplygin"          # general | chaplygin | eps
//!
//! [dims]
//! n = 3
//! k = 1
//! s = 0
//!
//! [coords]
//! shape = ["x", "y"]
//! group = ["z"]
//!
//! [parameters]                # optional named constants
//!
//! [metric]
//! g_alpha_beta = [["1", "0"], ["0", "1"]]
//! g_a_alpha = [["0", "0"]]    # optional, zero by default
//! g_a_b = [["1"]]
//!
//! [connection]
//! A = [["0", "x"]]
//!
//! [body_basis]                # required when s > 0
//! e = []
//!
//! [structure_constants]       # 1-based C^a_{bc}; the (c, b) partner is implied
//! entries = [{ a = 2, b = 1, c = 3, value = -1.0 }]
//!
//! [potential]
//! V = "0"
//!
//! [group_frame]               # optional; columns are the left-invariant fields
//! frame = [["1"]]
//!
//! [domain]                    # optional sampling box per coordinate
//! x = [-2.0, 2.0]
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::expr::{parse_with_vars, Expr};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    General,
    Chaplygin,
    Eps,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::General => "general",
            Kind::Chaplygin => "chaplygin",
            Kind::Eps => "eps",
        }
    }
}

/// A dense matrix of expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Expr>,
}

impl ExprMatrix {
    pub fn zeros(rows: usize, cols: usize) -> ExprMatrix {
        ExprMatrix {
            rows,
            cols,
            data: vec![Expr::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> ExprMatrix {
        let mut m = ExprMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Expr::one());
        }
        m
    }

    /// Parses a row-major table of expression strings over `vars`.
    pub fn parse(rows: usize, cols: usize, table: &[Vec<String>], vars: &[&str]) -> Result<ExprMatrix> {
        if table.len() != rows || table.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidSystem(format!(
                "expected a {rows}x{cols} matrix, found {} rows",
                table.len()
            )));
        }
        let mut m = ExprMatrix::zeros(rows, cols);
        for (i, row) in table.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                m.set(i, j, parse_with_vars(s, vars)?);
            }
        }
        Ok(m)
    }

    /// Builds from string literals; panics on malformed input (registry use).
    pub fn from_strs(table: &[&[&str]]) -> ExprMatrix {
        let rows = table.len();
        let cols = table.first().map_or(0, |r| r.len());
        let mut m = ExprMatrix::zeros(rows, cols);
        for (i, row) in table.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged matrix literal");
            for (j, s) in row.iter().enumerate() {
                m.set(i, j, crate::expr::parse(s).expect("valid expression literal"));
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, e: Expr) {
        self.data[i * self.cols + j] = e;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Expr> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> ExprMatrix {
        ExprMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    fn to_table(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_string()).collect())
            .collect()
    }

    fn is_zero(&self) -> bool {
        self.data.iter().all(Expr::is_zero)
    }

    fn is_identity(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| {
                    let e = self.get(i, j);
                    if i == j {
                        e.is_one()
                    } else {
                        e.is_zero()
                    }
                })
            })
    }
}

/// Structure constants C^a_{bc} of the group's Lie algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureConstants {
    k: usize,
    data: Vec<f64>,
}

impl StructureConstants {
    pub fn abelian(k: usize) -> StructureConstants {
        StructureConstants {
            k,
            data: vec![0.0; k * k * k],
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// C^a_{bc}, zero-based.
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.k + b) * self.k + c]
    }

    /// Sets C^a_{bc} = v and C^a_{cb} = -v (zero-based).
    pub fn set_pair(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let k = self.k;
        self.data[(a * k + b) * k + c] = v;
        self.data[(a * k + c) * k + b] = -v;
    }

    pub fn is_abelian(&self) -> bool {
        self.data.iter().all(|&c| c == 0.0)
    }

    pub fn is_antisymmetric(&self) -> bool {
        let k = self.k;
        (0..k).all(|a| (0..k).all(|b| (0..k).all(|c| self.get(a, b, c) == -self.get(a, c, b))))
    }

    /// Nonzero entries with b < c, one-based, as in the file format.
    pub fn entries(&self) -> Vec<StructureEntry> {
        let k = self.k;
        let mut out = Vec::new();
        for a in 0..k {
            for b in 0..k {
                for c in b + 1..k {
                    let v = self.get(a, b, c);
                    if v != 0.0 {
                        out.push(StructureEntry {
                            a: a + 1,
                            b: b + 1,
                            c: c + 1,
                            value: v,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Full specification of a nonholonomic system with symmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemDef {
    pub name: String,
    pub kind: Kind,
    pub shape: Vec<String>,
    pub group: Vec<String>,
    pub s: usize,
    pub parameters: BTreeMap<String, f64>,
    /// g_{αβ}, m×m.
    pub g_shape: ExprMatrix,
    /// g_{aα}, k×m.
    pub g_mixed: ExprMatrix,
    /// g_{ab}, k×k.
    pub g_group: ExprMatrix,
    /// A^a_α, k×m.
    pub connection: ExprMatrix,
    /// e^a_i, k×s.
    pub body_basis: ExprMatrix,
    pub structure: StructureConstants,
    pub potential: Expr,
    /// g^σ_d, k×k over the group coordinates: ġ^σ = g^σ_d ξ^d.
    pub group_frame: ExprMatrix,
    /// Sampling box per coordinate name.
    pub domain: BTreeMap<String, (f64, f64)>,
}

impl SystemDef {
    /// A system with zero blocks, identity group metric and identity frame.
    pub fn new(name: &str, kind: Kind, shape: &[&str], group: &[&str], s: usize) -> SystemDef {
        let (m, k) = (shape.len(), group.len());
        SystemDef {
            name: name.to_string(),
            kind,
            shape: shape.iter().map(|v| v.to_string()).collect(),
            group: group.iter().map(|v| v.to_string()).collect(),
            s,
            parameters: BTreeMap::new(),
            g_shape: ExprMatrix::identity(m),
            g_mixed: ExprMatrix::zeros(k, m),
            g_group: ExprMatrix::identity(k),
            connection: ExprMatrix::zeros(k, m),
            body_basis: ExprMatrix::zeros(k, s),
            structure: StructureConstants::abelian(k),
            potential: Expr::zero(),
            group_frame: ExprMatrix::identity(k),
            domain: BTreeMap::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.shape.len()
    }

    pub fn k(&self) -> usize {
        self.group.len()
    }

    pub fn n(&self) -> usize {
        self.m() + self.k()
    }

    /// Shape coordinates followed by group coordinates.
    pub fn coordinate_names(&self) -> Vec<&str> {
        self.shape.iter().chain(&self.group).map(String::as_str).collect()
    }

    fn allowed_names(&self) -> Vec<&str> {
        let mut v = self.coordinate_names();
        v.extend(self.parameters.keys().map(String::as_str));
        v
    }

    /// Sampling interval of a coordinate, `[-1, 1]` unless declared.
    pub fn interval(&self, name: &str) -> (f64, f64) {
        self.domain.get(name).copied().unwrap_or((-1.0, 1.0))
    }

    /// The same system relabelled as a general HPD system.
    pub fn as_general(&self) -> SystemDef {
        SystemDef {
            kind: Kind::General,
            ..self.clone()
        }
    }

    /// Substitutes parameter values into an expression.
    pub fn bind_parameters(&self, e: &Expr) -> Expr {
        if self.parameters.is_empty() {
            return e.clone();
        }
        let map: BTreeMap<String, Expr> = self
            .parameters
            .iter()
            .map(|(k, v)| (k.clone(), Expr::Const(*v)))
            .collect();
        e.substitute(&map)
    }

    /// Structural checks plus sampled symmetry and rank checks.
    pub fn validate(&self) -> Result<()> {
        let (m, k, s) = (self.m(), self.k(), self.s);
        let bad = |msg: String| Err(Error::InvalidSystem(msg));
        match self.kind {
            Kind::Chaplygin if s != 0 => return bad("chaplygin systems have s = 0".into()),
            Kind::Chaplygin if m == 0 => return bad("chaplygin systems need a shape space".into()),
            Kind::Eps if m != 0 => return bad("eps systems have no shape coordinates".into()),
            Kind::Eps if s == 0 => return bad("eps systems need s >= 1".into()),
            _ => {}
        }
        if s > k {
            return bad(format!("s = {s} exceeds the group dimension k = {k}"));
        }
        let dims = [
            ("g_alpha_beta", &self.g_shape, m, m),
            ("g_a_alpha", &self.g_mixed, k, m),
            ("g_a_b", &self.g_group, k, k),
            ("connection", &self.connection, k, m),
            ("body_basis", &self.body_basis, k, s),
            ("group_frame", &self.group_frame, k, k),
        ];
        for (what, mat, r, c) in dims {
            if mat.rows != r || mat.cols != c {
                return bad(format!("{what} is {}x{}, expected {r}x{c}", mat.rows, mat.cols));
            }
        }
        if self.structure.dim() != k {
            return bad("structure constants have the wrong dimension".into());
        }
        if !self.structure.is_antisymmetric() {
            return bad("structure constants are not antisymmetric in the lower indices".into());
        }
        let mut names = self.coordinate_names();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate coordinate names".into());
        }
        let allowed = self.allowed_names();
        let all = self
            .g_shape
            .iter()
            .chain(self.g_mixed.iter())
            .chain(self.g_group.iter())
            .chain(self.connection.iter())
            .chain(self.body_basis.iter())
            .chain(std::iter::once(&self.potential));
        for e in all {
            if let Some(v) = e.free_vars().into_iter().find(|v| !allowed.contains(&v.as_str())) {
                return Err(Error::UnknownIdentifier(v));
            }
        }
        let mut frame_vars: Vec<&str> = self.group.iter().map(String::as_str).collect();
        frame_vars.extend(self.parameters.keys().map(String::as_str));
        for e in self.group_frame.iter() {
            if let Some(v) = e.free_vars().into_iter().find(|v| !frame_vars.contains(&v.as_str())) {
                return bad(format!("group frame depends on non-group variable `{v}`"));
            }
        }
        self.sampled_checks()
    }

    fn sampled_checks(&self) -> Result<()> {
        let names = self.coordinate_names();
        let n = names.len();
        let bound = |e: &Expr| self.bind_parameters(e);
        for t in 0..7 {
            let q: Vec<f64> = names
                .iter()
                .enumerate()
                .map(|(i, nm)| {
                    let (lo, hi) = self.interval(nm);
                    let u = ((t * 7 + i * 3) % 11) as f64 / 11.0 + 0.5 / 11.0;
                    lo + (hi - lo) * u
                })
                .collect();
            let ev = |e: &Expr| bound(e).eval_at(&names, &q);
            for (what, mat) in [("g_alpha_beta", &self.g_shape), ("g_a_b", &self.g_group)] {
                for i in 0..mat.rows {
                    for j in i + 1..mat.cols {
                        let (a, b) = (ev(mat.get(i, j))?, ev(mat.get(j, i))?);
                        if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                            return Err(Error::InvalidSystem(format!(
                                "{what} is not symmetric at {q:?}"
                            )));
                        }
                    }
                }
            }
            if self.s > 0 {
                let e = nalgebra::DMatrix::from_fn(self.k(), self.s, |a, i| {
                    ev(self.body_basis.get(a, i)).unwrap_or(f64::NAN)
                });
                if e.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Singularity(format!("body basis at {q:?}")));
                }
                let rank = e.clone().svd(false, false).rank(1e-10);
                if rank < self.s {
                    return Err(Error::InvalidSystem(format!(
                        "body basis columns are dependent at {q:?}"
                    )));
                }
            }
            let _ = n;
        }
        Ok(())
    }

    /// Parses the TOML system-definition format.
    pub fn from_toml(text: &str) -> Result<SystemDef> {
        let file: SystemFile =
            toml::from_str(text).map_err(|e| Error::InvalidSystem(e.to_string()))?;
        file.into_def()
    }

    /// Serializes to the TOML system-definition format.
    pub fn to_toml(&self) -> String {
        let file = SystemFile::from_def(self);
        toml::to_string_pretty(&file).expect("system definitions serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureEntry {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    name: String,
    kind: Kind,
    dims: Dims,
    coords: Coords,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    parameters: BTreeMap<String, f64>,
    metric: Option<Metric>,
    connection: Option<Connection>,
    body_basis: Option<BodyBasis>,
    structure_constants: Option<Structure>,
    potential: Option<Potential>,
    group_frame: Option<Frame>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    domain: BTreeMap<String, [f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    n: usize,
    k: usize,
    s: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Coords {
    #[serde(default)]
    shape: Vec<String>,
    group: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metric {
    g_alpha_beta: Option<Vec<Vec<String>>>,
    g_a_alpha: Option<Vec<Vec<String>>>,
    g_a_b: Option<Vec<Vec<String>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Connection {
    #[serde(rename = "A")]
    a: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyBasis {
    e: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Structure {
    #[serde(default)]
    entries: Vec<StructureEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Potential {
    #[serde(rename = "V")]
    v: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frame {
    frame: Vec<Vec<String>>,
}

fn missing(block: &str, kind: Kind) -> Error {
    Error::InvalidSystem(format!("missing block `{block}` required for kind {}", kind.name()))
}

impl SystemFile {
    fn into_def(self) -> Result<SystemDef> {
        let (m, k, s) = (self.coords.shape.len(), self.coords.group.len(), self.dims.s);
        if self.dims.k != k || self.dims.n != m + k {
            return Err(Error::InvalidSystem(format!(
                "dims n = {}, k = {} disagree with {} shape and {} group coordinates",
                self.dims.n, self.dims.k, m, k
            )));
        }
        let shape: Vec<&str> = self.coords.shape.iter().map(String::as_str).collect();
        let group: Vec<&str> = self.coords.group.iter().map(String::as_str).collect();
        let mut def = SystemDef::new(&self.name, self.kind, &shape, &group, s);
        def.parameters = self.parameters;
        let mut vars = def.coordinate_names();
        vars.extend(def.parameters.keys().map(String::as_str));
        let vars: Vec<String> = vars.iter().map(|v| v.to_string()).collect();
        let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
        let kind = self.kind;

        let metric = self.metric.ok_or_else(|| missing("metric", kind))?;
        match metric.g_alpha_beta {
            Some(t) => def.g_shape = ExprMatrix::parse(m, m, &t, &vars)?,
            None if m > 0 => return Err(missing("metric.g_alpha_beta", kind)),
            None => {}
        }
        if let Some(t) = metric.g_a_alpha {
            def.g_mixed = ExprMatrix::parse(k, m, &t, &vars)?;
        }
        let gab = metric.g_a_b.ok_or_else(|| missing("metric.g_a_b", kind))?;
        def.g_group = ExprMatrix::parse(k, k, &gab, &vars)?;

        match self.connection {
            Some(c) => def.connection = ExprMatrix::parse(k, m, &c.a, &vars)?,
            None if m > 0 => return Err(missing("connection", kind)),
            None => {}
        }
        match self.body_basis {
            Some(b) if s > 0 => def.body_basis = ExprMatrix::parse(k, s, &b.e, &vars)?,
            Some(b) if !b.e.is_empty() => {
                return Err(Error::InvalidSystem("body_basis given but s = 0".into()))
            }
            None if s > 0 => return Err(missing("body_basis", kind)),
            _ => {}
        }
        match self.structure_constants {
            Some(st) => {
                for en in st.entries {
                    if en.a == 0 || en.b == 0 || en.c == 0 || en.a > k || en.b > k || en.c > k {
                        return Err(Error::InvalidSystem(format!(
                            "structure constant index out of range 1..={k}"
                        )));
                    }
                    let (a, b, c) = (en.a - 1, en.b - 1, en.c - 1);
                    let prior = def.structure.get(a, b, c);
                    if b == c || (prior != 0.0 && prior != en.value) {
                        return Err(Error::InvalidSystem(format!(
                            "inconsistent structure constant C^{}_{{{}{}}}",
                            en.a, en.b, en.c
                        )));
                    }
                    def.structure.set_pair(a, b, c, en.value);
                }
            }
            None if kind != Kind::Chaplygin => return Err(missing("structure_constants", kind)),
            None => {}
        }
        let pot = self.potential.ok_or_else(|| missing("potential", kind))?;
        def.potential = parse_with_vars(&pot.v, &vars)?;
        if let Some(fr) = self.group_frame {
            let mut fv: Vec<&str> = group.clone();
            fv.extend(def.parameters.keys().map(String::as_str));
            def.group_frame = ExprMatrix::parse(k, k, &fr.frame, &fv)?;
        }
        for (name, [lo, hi]) in self.domain {
            if !def.coordinate_names().contains(&name.as_str()) {
                return Err(Error::UnknownIdentifier(name));
            }
            if !(lo < hi) {
                return Err(Error::InvalidSystem(format!("empty domain for `{name}`")));
            }
            def.domain.insert(name, (lo, hi));
        }
        def.validate()?;
        Ok(def)
    }

    fn from_def(d: &SystemDef) -> SystemFile {
        let (m, s) = (d.m(), d.s);
        SystemFile {
            name: d.name.clone(),
            kind: d.kind,
            dims: Dims {
                n: d.n(),
                k: d.k(),
                s,
            },
            coords: Coords {
                shape: d.shape.clone(),
                group: d.group.clone(),
            },
            parameters: d.parameters.clone(),
            metric: Some(Metric {
                g_alpha_beta: (m > 0).then(|| d.g_shape.to_table()),
                g_a_alpha: (!d.g_mixed.is_zero()).then(|| d.g_mixed.to_table()),
                g_a_b: Some(d.g_group.to_table()),
            }),
            connection: (m > 0).then(|| Connection {
                a: d.connection.to_table(),
            }),
            body_basis: (s > 0).then(|| BodyBasis {
                e: d.body_basis.to_table(),
            }),
            structure_constants: Some(Structure {
                entries: d.structure.entries(),
            }),
            potential: Some(Potential {
                v: d.potential.to_string(),
            }),
            group_frame: (!d.group_frame.is_identity()).then(|| Frame {
                frame: d.group_frame.to_table(),
            }),
            domain: d.domain.iter().map(|(k, v)| (k.clone(), [v.0, v.1])).collect(),
        }
    }
}
