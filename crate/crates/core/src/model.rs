//! Factorisation models as index-set structure plus a coupling matrix.
//!
//! A model declares an index universe, a list of latent factors (each over a
//! subset of the universe) and a list of observed tensors. Observation `nu`
//! is approximated by the marginal sum, over every index it does not carry,
//! of the product of the factors coupled to it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GctfError, Result};
use crate::io;
use crate::tensor::{DenseTensor, Index, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDecl {
    pub name: String,
    pub indices: Vec<Index>,
}

impl FactorDecl {
    pub fn new(name: impl Into<String>, indices: Vec<Index>) -> Self {
        FactorDecl {
            name: name.into(),
            indices,
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.indices.iter().map(|i| i.label.as_str()).collect()
    }
}

/// An observed tensor with its missing-data mask. The visible index set is
/// the data tensor's index list.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDecl {
    pub name: String,
    pub data: DenseTensor,
    pub mask: Mask,
}

impl ObservationDecl {
    /// Declares an observation with all-zero data and a fully observed mask.
    pub fn empty(name: impl Into<String>, visible: Vec<Index>) -> Result<Self> {
        Ok(ObservationDecl {
            name: name.into(),
            data: DenseTensor::zeros(visible.clone())?,
            mask: Mask::ones(visible)?,
        })
    }

    pub fn visible(&self) -> &[Index] {
        self.data.indices()
    }
}

/// Binary `|nu| x |alpha|` matrix; entry `[nu][alpha]` is set when factor
/// `alpha` takes part in the product for observation `nu`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingMatrix {
    rows: Vec<Vec<bool>>,
}

impl CouplingMatrix {
    pub fn new(entries: &[Vec<u8>]) -> Result<Self> {
        let width = entries.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(entries.len());
        for (nu, row) in entries.iter().enumerate() {
            if row.len() != width {
                return Err(GctfError::Shape(format!(
                    "coupling row {nu} has {} entries, expected {width}",
                    row.len()
                )));
            }
            let parsed = row
                .iter()
                .map(|&e| match e {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(GctfError::InvalidValue(format!(
                        "coupling entries must be 0 or 1, found {other}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(parsed);
        }
        Ok(CouplingMatrix { rows })
    }

    pub fn num_observations(&self) -> usize {
        self.rows.len()
    }

    pub fn num_factors(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_coupled(&self, observation: usize, factor: usize) -> bool {
        self.rows[observation][factor]
    }

    pub fn to_entries(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    BadIndex,
    BadFactor,
    BadObservation,
    CouplingShape,
    UnexplainedObservation,
    OrphanFactor,
    UncoveredIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Violation {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub index_universe: Vec<Index>,
    pub factors: Vec<FactorDecl>,
    pub observations: Vec<ObservationDecl>,
    pub coupling: CouplingMatrix,
}

impl ModelSpec {
    pub fn factor_id(&self, name: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| GctfError::Lookup {
                kind: "factor",
                name: name.to_string(),
            })
    }

    pub fn observation_id(&self, name: &str) -> Result<usize> {
        self.observations
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| GctfError::Lookup {
                kind: "observation",
                name: name.to_string(),
            })
    }

    /// Factors taking part in observation `nu`, in declaration order.
    pub fn coupled_factors(&self, nu: usize) -> Vec<usize> {
        (0..self.factors.len())
            .filter(|&a| self.coupling.is_coupled(nu, a))
            .collect()
    }

    /// Observations that factor `alpha` takes part in.
    pub fn coupled_observations(&self, alpha: usize) -> Vec<usize> {
        (0..self.observations.len())
            .filter(|&nu| self.coupling.is_coupled(nu, alpha))
            .collect()
    }

    /// Replaces the data and mask of an observation; both must carry its visible index set.
    pub fn set_observation(&mut self, name: &str, data: DenseTensor, mask: Mask) -> Result<()> {
        let nu = self.observation_id(name)?;
        let obs = &mut self.observations[nu];
        if data.indices() != obs.visible() || mask.indices() != obs.visible() {
            return Err(GctfError::Shape(format!(
                "observation `{name}` is over {:?}; got data {:?} and mask {:?}",
                obs.data.labels(),
                data.labels(),
                mask.tensor().labels()
            )));
        }
        obs.data = data;
        obs.mask = mask;
        Ok(())
    }

    pub fn set_mask(&mut self, name: &str, mask: Mask) -> Result<()> {
        let nu = self.observation_id(name)?;
        let data = self.observations[nu].data.clone();
        self.set_observation(name, data, mask)
    }

    /// Checks every structural invariant and returns one record per failure.
    pub fn validate(&self) -> Vec<Violation> {
        use ViolationKind::*;
        let mut out = Vec::new();

        for (n, idx) in self.index_universe.iter().enumerate() {
            if idx.cardinality == 0 {
                out.push(Violation::new(
                    BadIndex,
                    format!("index {} has zero cardinality", idx.label),
                ));
            }
            if self.index_universe[..n]
                .iter()
                .any(|o| o.label == idx.label)
            {
                out.push(Violation::new(
                    BadIndex,
                    format!("index {} declared twice", idx.label),
                ));
            }
        }

        let check_member = |owner: &str, idx: &Index, out: &mut Vec<Violation>, kind| match self
            .index_universe
            .iter()
            .find(|u| u.label == idx.label)
        {
            None => out.push(Violation::new(
                kind,
                format!("{owner} uses undeclared index {}", idx.label),
            )),
            Some(u) if u.cardinality != idx.cardinality => out.push(Violation::new(
                kind,
                format!(
                    "{owner} uses index {} with cardinality {} (declared {})",
                    idx.label, idx.cardinality, u.cardinality
                ),
            )),
            Some(_) => {}
        };

        for (a, f) in self.factors.iter().enumerate() {
            if f.indices.is_empty() {
                out.push(Violation::new(
                    BadFactor,
                    format!("factor {} has an empty index set", f.name),
                ));
            }
            for (n, idx) in f.indices.iter().enumerate() {
                if f.indices[..n].iter().any(|o| o.label == idx.label) {
                    out.push(Violation::new(
                        BadFactor,
                        format!("factor {} repeats index {}", f.name, idx.label),
                    ));
                }
                check_member(&format!("factor {}", f.name), idx, &mut out, BadFactor);
            }
            if self.factors[..a].iter().any(|o| o.name == f.name) {
                out.push(Violation::new(
                    BadFactor,
                    format!("factor name {} declared twice", f.name),
                ));
            }
        }

        for (nu, o) in self.observations.iter().enumerate() {
            if o.mask.indices() != o.data.indices() {
                out.push(Violation::new(
                    BadObservation,
                    format!("mask of {} does not match its data layout", o.name),
                ));
            }
            for idx in o.visible() {
                check_member(
                    &format!("observation {}", o.name),
                    idx,
                    &mut out,
                    BadObservation,
                );
            }
            if self.observations[..nu].iter().any(|p| p.name == o.name) {
                out.push(Violation::new(
                    BadObservation,
                    format!("observation name {} declared twice", o.name),
                ));
            }
        }

        let shape_ok = self.coupling.num_observations() == self.observations.len()
            && (self.observations.is_empty() || self.coupling.num_factors() == self.factors.len());
        if !shape_ok {
            out.push(Violation::new(
                CouplingShape,
                format!(
                    "coupling matrix is {}x{} but the model has {} observations and {} factors",
                    self.coupling.num_observations(),
                    self.coupling.num_factors(),
                    self.observations.len(),
                    self.factors.len()
                ),
            ));
            return out;
        }

        for (nu, o) in self.observations.iter().enumerate() {
            let coupled = self.coupled_factors(nu);
            if coupled.is_empty() {
                out.push(Violation::new(
                    UnexplainedObservation,
                    format!("observation {} has no coupled factor", o.name),
                ));
            }
            for idx in o.visible() {
                let covered = coupled
                    .iter()
                    .any(|&a| self.factors[a].indices.iter().any(|i| i.label == idx.label));
                if !covered {
                    out.push(Violation::new(
                        UncoveredIndex,
                        format!("uncovered visible index {} in {}", idx.label, o.name),
                    ));
                }
            }
        }
        for (a, f) in self.factors.iter().enumerate() {
            if self.coupled_observations(a).is_empty() {
                out.push(Violation::new(
                    OrphanFactor,
                    format!("orphan factor {} (coupled to no observation)", f.name),
                ));
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GctfError::InvalidModel(v))
        }
    }
}

/// Cardinalities of the link-prediction data: users, locations, activities,
/// the side-information location axis of the user-location matrix, and
/// location features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
}

impl LinkDims {
    pub fn new(i: usize, j: usize, k: usize, m: usize, n: usize) -> Self {
        LinkDims { i, j, k, m, n }
    }
}

fn positive(what: &str, values: &[(&str, usize)]) -> Result<()> {
    for (name, v) in values {
        if *v == 0 {
            return Err(GctfError::InvalidValue(format!(
                "{what}: cardinality of `{name}` must be at least 1"
            )));
        }
    }
    Ok(())
}

fn assemble(
    universe: &[(&str, usize)],
    factors: &[(&str, &[&str])],
    observations: &[(&str, &[&str])],
    coupling: &[Vec<u8>],
) -> Result<ModelSpec> {
    let index_universe: Vec<Index> = universe.iter().map(|&(l, c)| Index::new(l, c)).collect();
    let lookup = |labels: &[&str]| -> Vec<Index> {
        labels
            .iter()
            .map(|l| {
                index_universe
                    .iter()
                    .find(|u| u.label == *l)
                    .cloned()
                    .expect("builder index declared in universe")
            })
            .collect()
    };
    let factors = factors
        .iter()
        .map(|(name, labels)| FactorDecl::new(*name, lookup(labels)))
        .collect();
    let observations = observations
        .iter()
        .map(|(name, labels)| ObservationDecl::empty(*name, lookup(labels)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelSpec {
        index_universe: index_universe.clone(),
        factors,
        observations,
        coupling: CouplingMatrix::new(coupling)?,
    })
}

/// Single-tensor CP: `X(i,j,k) ~ sum_r Z1(i,r) Z2(j,r) Z3(k,r)`.
pub fn build_cp(dims: [usize; 3], components: usize) -> Result<ModelSpec> {
    let [i, j, k] = dims;
    positive("cp", &[("i", i), ("j", j), ("k", k), ("r", components)])?;
    assemble(
        &[("i", i), ("j", j), ("k", k), ("r", components)],
        &[
            ("Z1", &["i", "r"]),
            ("Z2", &["j", "r"]),
            ("Z3", &["k", "r"]),
        ],
        &[("X1", &["i", "j", "k"])],
        &[vec![1, 1, 1]],
    )
}

/// Single-tensor Tucker with core `Z4(p,q,r)`.
pub fn build_tucker(dims: [usize; 3], core: [usize; 3]) -> Result<ModelSpec> {
    let [i, j, k] = dims;
    let [p, q, r] = core;
    let universe = [("i", i), ("j", j), ("k", k), ("p", p), ("q", q), ("r", r)];
    positive("tucker", &universe)?;
    assemble(
        &universe,
        &[
            ("Z1", &["i", "p"]),
            ("Z2", &["j", "q"]),
            ("Z3", &["k", "r"]),
            ("Z4", &["p", "q", "r"]),
        ],
        &[("X1", &["i", "j", "k"])],
        &[vec![1, 1, 1, 1]],
    )
}

/// Coupled CP over the user-location-activity tensor and its two side matrices:
///
/// ```text
/// X1(i,j,k) ~ sum_r A(i,r) B(j,r) C(k,r)
/// X2(i,m)   ~ sum_r A(i,r) D(m,r)
/// X3(j,n)   ~ sum_r B(j,r) E(n,r)
/// ```
pub fn build_coupled_cp(dims: LinkDims, components: usize) -> Result<ModelSpec> {
    let LinkDims { i, j, k, m, n } = dims;
    let universe = [
        ("i", i),
        ("j", j),
        ("k", k),
        ("m", m),
        ("n", n),
        ("r", components),
    ];
    positive("coupled cp", &universe)?;
    assemble(
        &universe,
        &[
            ("A", &["i", "r"]),
            ("B", &["j", "r"]),
            ("C", &["k", "r"]),
            ("D", &["m", "r"]),
            ("E", &["n", "r"]),
        ],
        &[
            ("X1", &["i", "j", "k"]),
            ("X2", &["i", "m"]),
            ("X3", &["j", "n"]),
        ],
        &[
            vec![1, 1, 1, 0, 0],
            vec![1, 0, 0, 1, 0],
            vec![0, 1, 0, 0, 1],
        ],
    )
}

/// Coupled Tucker: the tensor goes through a core `D(p,q,r)`, the side
/// matrices share the user factor `A(i,p)` and the location factor `B(j,q)`.
///
/// ```text
/// X1(i,j,k) ~ sum_{p,q,r} A(i,p) B(j,q) C(k,r) D(p,q,r)
/// X2(i,m)   ~ sum_p A(i,p) E(m,p)
/// X3(j,n)   ~ sum_q B(j,q) F(n,q)
/// ```
pub fn build_coupled_tucker(dims: LinkDims, core: [usize; 3]) -> Result<ModelSpec> {
    let LinkDims { i, j, k, m, n } = dims;
    let [p, q, r] = core;
    let universe = [
        ("i", i),
        ("j", j),
        ("k", k),
        ("m", m),
        ("n", n),
        ("p", p),
        ("q", q),
        ("r", r),
    ];
    positive("coupled tucker", &universe)?;
    assemble(
        &universe,
        &[
            ("A", &["i", "p"]),
            ("B", &["j", "q"]),
            ("C", &["k", "r"]),
            ("D", &["p", "q", "r"]),
            ("E", &["m", "p"]),
            ("F", &["n", "q"]),
        ],
        &[
            ("X1", &["i", "j", "k"]),
            ("X2", &["i", "m"]),
            ("X3", &["j", "n"]),
        ],
        &[
            vec![1, 1, 1, 1, 0, 0],
            vec![1, 0, 0, 0, 1, 0],
            vec![0, 1, 0, 0, 0, 1],
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorEntry {
    pub name: String,
    pub indices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationEntry {
    pub name: String,
    pub indices: Vec<String>,
    /// Coordinate file holding the data; all zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Coordinate file holding a 0/1 mask; fully observed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

/// Plain-text form of a [`ModelSpec`]: index cardinalities, factor and
/// observation index sets, coupling rows, and optional data file paths.
///
/// ```toml
/// coupling = [[1, 1, 0], [1, 0, 1]]
///
/// [indices]
/// i = 4
/// j = 3
/// r = 2
///
/// [[factors]]
/// name = "A"
/// indices = ["i", "r"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub coupling: Vec<Vec<u8>>,
    pub indices: BTreeMap<String, usize>,
    pub factors: Vec<FactorEntry>,
    pub observations: Vec<ObservationEntry>,
}

impl ModelDocument {
    /// Structure of `spec`; data paths are left empty.
    pub fn from_spec(spec: &ModelSpec) -> Self {
        let names = |ix: &[Index]| ix.iter().map(|i| i.label.clone()).collect();
        ModelDocument {
            coupling: spec.coupling.to_entries(),
            indices: spec
                .index_universe
                .iter()
                .map(|i| (i.label.clone(), i.cardinality))
                .collect(),
            factors: spec
                .factors
                .iter()
                .map(|f| FactorEntry {
                    name: f.name.clone(),
                    indices: names(&f.indices),
                })
                .collect(),
            observations: spec
                .observations
                .iter()
                .map(|o| ObservationEntry {
                    name: o.name.clone(),
                    indices: names(o.visible()),
                    data: None,
                    mask: None,
                })
                .collect(),
        }
    }

    /// Builds the model, reading any referenced data relative to `base_dir`.
    pub fn to_spec(&self, base_dir: &Path) -> Result<ModelSpec> {
        let index_universe: Vec<Index> = self
            .indices
            .iter()
            .map(|(l, &c)| Index::new(l.clone(), c))
            .collect();
        let resolve = |owner: &str, labels: &[String]| -> Result<Vec<Index>> {
            labels
                .iter()
                .map(|l| {
                    index_universe
                        .iter()
                        .find(|u| &u.label == l)
                        .cloned()
                        .ok_or_else(|| {
                            GctfError::Document(format!("{owner} uses undeclared index `{l}`"))
                        })
                })
                .collect()
        };
        let factors = self
            .factors
            .iter()
            .map(|f| {
                Ok(FactorDecl::new(
                    f.name.clone(),
                    resolve(&format!("factor {}", f.name), &f.indices)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut observations = Vec::with_capacity(self.observations.len());
        for o in &self.observations {
            let visible = resolve(&format!("observation {}", o.name), &o.indices)?;
            let mut decl = ObservationDecl::empty(o.name.clone(), visible)?;
            let labels: Vec<&str> = o.indices.iter().map(String::as_str).collect();
            if let Some(p) = &o.data {
                decl.data = read_checked(&base_dir.join(p), &labels, decl.visible())?;
            }
            if let Some(p) = &o.mask {
                decl.mask = Mask::new(read_checked(&base_dir.join(p), &labels, decl.visible())?)?;
            }
            observations.push(decl);
        }
        Ok(ModelSpec {
            index_universe,
            factors,
            observations,
            coupling: CouplingMatrix::new(&self.coupling)?,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GctfError::Document(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GctfError::Document(e.to_string()))
    }
}

fn read_checked(path: &Path, labels: &[&str], visible: &[Index]) -> Result<DenseTensor> {
    let t = io::read_tensor(path, labels)?;
    if t.indices() != visible {
        return Err(GctfError::Shape(format!(
            "{} has shape {:?}, expected {:?}",
            path.display(),
            t.shape(),
            visible.iter().map(|i| i.cardinality).collect::<Vec<_>>()
        )));
    }
    Ok(t)
}
