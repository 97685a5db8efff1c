//! Text file formats: spaces (JSON), distance matrices (CSV), mapped
//! functions (JSON), generators (MatrixMarket plus a JSON weight sidecar)
//! and certificate reports (JSON plus a slack-table CSV).
//!
//! JSON floats use the shortest representation that reads back to the same
//! value; CSV floats use 17 significant digits. Non-finite JSON numbers are
//! written as `null`.

use crate::energy::{Generator, PoincareCertificate};
use crate::error::{Error, Result};
use crate::mapping::MappedFunction;
use crate::metric::{CoordMetric, Embedding, FiniteMetricMeasureSpace as Space, TreeEdge};
use crate::target::{MetricTree, TargetPoint, TargetSpace, TreePoint};
use nalgebra::DMatrix;
use nalgebra_sparse::io::{load_coo_from_matrix_market_str, save_to_matrix_market_str};
use nalgebra_sparse::CooMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

/// On-disk form of a space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceFile {
    Matrix {
        n: usize,
        dist: Vec<Vec<f64>>,
        weight: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        /// Model-space coordinates, used by nearest-point maps.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding: Option<Embedding>,
    },
    Coords {
        coords: Vec<Vec<f64>>,
        metric: CoordMetric,
        weight: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl SpaceFile {
    pub fn from_space(m: &Space) -> Self {
        SpaceFile::Matrix {
            n: m.n(),
            dist: m.dist_rows(),
            weight: m.weights().to_vec(),
            label: m.label().map(str::to_owned),
            embedding: m.embedding().cloned(),
        }
    }

    pub fn into_space(self) -> Result<Space> {
        let (space, label) = match self {
            SpaceFile::Matrix {
                n,
                dist,
                weight,
                label,
                embedding,
            } => {
                if dist.len() != n {
                    return Err(Error::Mismatch(format!("n = {n} but dist has {} rows", dist.len())));
                }
                let mut s = Space::new(dist, weight)?;
                if let Some(e) = embedding {
                    s = s.with_embedding(e)?;
                }
                (s, label)
            }
            SpaceFile::Coords {
                coords,
                metric,
                weight,
                label,
            } => (Space::from_coords(coords, metric, weight)?, label),
        };
        Ok(match label {
            Some(l) => space.with_label(l),
            None => space,
        })
    }
}

pub fn space_to_json(m: &Space) -> String {
    to_json(&SpaceFile::from_space(m))
}

pub fn space_from_json(text: &str) -> Result<Space> {
    serde_json::from_str::<SpaceFile>(text)?.into_space()
}

pub fn read_space(path: &Path) -> Result<Space> {
    space_from_json(&read(path)?)
}

/// Distance matrix rows as CSV, no header.
pub fn distance_csv(m: &Space) -> String {
    let mut s = String::new();
    for i in 0..m.n() {
        let row: Vec<String> = m.row(i).iter().map(|d| format!("{d:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// On-disk description of a target space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetFile {
    Euclidean { dim: usize },
    Tree { edges: Vec<TreeEdge> },
    Finite { space: SpaceFile },
    Product { factors: Vec<TargetFile> },
}

impl TargetFile {
    pub fn from_target(t: &TargetSpace) -> Self {
        match t {
            TargetSpace::Euclidean { dim } => TargetFile::Euclidean { dim: *dim },
            TargetSpace::Tree(tree) => TargetFile::Tree {
                edges: tree.edges().to_vec(),
            },
            TargetSpace::Finite(s) => TargetFile::Finite {
                space: SpaceFile::from_space(s),
            },
            TargetSpace::Product(f) => TargetFile::Product {
                factors: f.iter().map(Self::from_target).collect(),
            },
        }
    }

    pub fn into_target(self) -> Result<TargetSpace> {
        Ok(match self {
            TargetFile::Euclidean { dim } => {
                if dim == 0 {
                    return Err(Error::param("Euclidean target needs dim >= 1"));
                }
                TargetSpace::Euclidean { dim }
            }
            TargetFile::Tree { edges } => TargetSpace::tree(MetricTree::new(&edges)?),
            TargetFile::Finite { space } => TargetSpace::finite(space.into_space()?),
            TargetFile::Product { factors } => {
                TargetSpace::Product(factors.into_iter().map(Self::into_target).collect::<Result<_>>()?)
            }
        })
    }
}

fn point_to_value(p: &TargetPoint) -> Value {
    match p {
        TargetPoint::Vector(v) => json!(v),
        TargetPoint::Tree(t) => json!({ "edge": t.edge, "offset": t.offset }),
        TargetPoint::Index(i) => json!(i),
        TargetPoint::Tuple(ps) => Value::Array(ps.iter().map(point_to_value).collect()),
    }
}

fn point_from_value(t: &TargetSpace, v: &Value) -> Result<TargetPoint> {
    let bad = || Error::Mismatch(format!("value {v} does not fit the target"));
    let p = match t {
        TargetSpace::Euclidean { .. } => {
            TargetPoint::Vector(serde_json::from_value::<Vec<f64>>(v.clone()).map_err(|_| bad())?)
        }
        TargetSpace::Tree(_) => TargetPoint::Tree(serde_json::from_value::<TreePoint>(v.clone()).map_err(|_| bad())?),
        TargetSpace::Finite(_) => TargetPoint::Index(v.as_u64().ok_or_else(bad)? as usize),
        TargetSpace::Product(f) => {
            let items = v.as_array().filter(|a| a.len() == f.len()).ok_or_else(bad)?;
            TargetPoint::Tuple(items.iter().zip(f).map(|(v, t)| point_from_value(t, v)).collect::<Result<_>>()?)
        }
    };
    t.check_point(&p)?;
    Ok(p)
}

/// `{"domain": label, "target": TargetFile, "values": [...]}` with values
/// as coordinate lists, `{edge, offset}` objects, indices or nested lists.
pub fn map_to_json(u: &MappedFunction) -> String {
    to_json(&json!({
        "domain": u.domain().label(),
        "n": u.domain().n(),
        "target": TargetFile::from_target(u.target()),
        "values": u.values().iter().map(point_to_value).collect::<Vec<_>>(),
    }))
}

/// Reads a map onto `domain`; labels must agree when both are present.
pub fn map_from_json(text: &str, domain: Arc<Space>) -> Result<MappedFunction> {
    let v: Value = serde_json::from_str(text)?;
    if let (Some(l), Some(d)) = (v.get("domain").and_then(Value::as_str), domain.label()) {
        if l != d {
            return Err(Error::Mismatch(format!("map is defined on '{l}', not on '{d}'")));
        }
    }
    let target: TargetFile = serde_json::from_value(v.get("target").cloned().unwrap_or(Value::Null))?;
    let target = target.into_target()?;
    let values = v
        .get("values")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Mismatch("map file lacks a values array".into()))?
        .iter()
        .map(|x| point_from_value(&target, x))
        .collect::<Result<_>>()?;
    MappedFunction::new(domain, target, values)
}

/// The generator matrix `A` in MatrixMarket coordinate form.
pub fn generator_to_matrix_market(g: &Generator) -> String {
    let a = g.matrix();
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != 0.0 {
                coo.push(i, j, a[(i, j)]);
            }
        }
    }
    save_to_matrix_market_str(&coo)
}

/// `{"weights": [...]}`.
pub fn weights_to_json(w: &[f64]) -> String {
    to_json(&json!({ "weights": w }))
}

pub fn weights_from_json(text: &str) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Sidecar {
        weights: Vec<f64>,
    }
    Ok(serde_json::from_str::<Sidecar>(text)?.weights)
}

/// Rebuilds a generator from a MatrixMarket matrix and its weights.
pub fn generator_from_matrix_market(text: &str, weights: Vec<f64>) -> Result<Generator> {
    let coo: CooMatrix<f64> =
        load_coo_from_matrix_market_str(text).map_err(|e| Error::param(format!("matrix market: {e}")))?;
    let mut a = DMatrix::zeros(coo.nrows(), coo.ncols());
    for (i, j, v) in coo.triplet_iter() {
        a[(i, j)] += *v;
    }
    if a.nrows() != a.ncols() || a.nrows() != weights.len() {
        return Err(Error::WeightLength {
            got: weights.len(),
            expected: a.nrows(),
        });
    }
    Generator::from_matrix(a, weights)
}

/// Certificate summary `{params, C, worst_ball, slack_table_path}`; the
/// slack table itself goes to [`slack_csv`].
pub fn certificate_to_json(cert: &PoincareCertificate, slack_table_path: &str) -> String {
    let worst = cert.worst_ball.map(|i| {
        let s = &cert.slack[i];
        json!({ "map": s.map, "x": s.x, "r": s.r, "lhs": s.lhs, "mu": s.mu })
    });
    to_json(&json!({
        "params": {
            "p": cert.p,
            "c": cert.c,
            "rho": cert.rho,
            "R": cert.big_r,
            "mu_rule": cert.mu_rule,
        },
        "C": cert.constant,
        "feasible": cert.feasible,
        "worst_ball": worst,
        "slack_table_path": slack_table_path,
    }))
}

pub fn slack_csv(cert: &PoincareCertificate) -> String {
    let mut s = String::from("map,x,r,lhs,mu,ratio,slack,proof_ratio,proof_bound\n");
    for e in &cert.slack {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            e.map,
            e.x,
            e.r,
            e.lhs,
            e.mu,
            e.ratio,
            e.slack,
            opt(e.proof_ratio),
            opt(e.proof_bound)
        );
    }
    s
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}

pub fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}
