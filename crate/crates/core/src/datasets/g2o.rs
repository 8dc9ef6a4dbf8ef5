//! g2o pose-graph text files (`VERTEX_SE2`, `EDGE_SE2`, `VERTEX_SE3:QUAT`,
//! `EDGE_SE3:QUAT`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Dim, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraphEdge {
    pub from: usize,
    pub to: usize,
    pub relative: Pose,
    /// Symmetric information matrix in g2o ordering: `[x, y, θ]` for SE2,
    /// `[x, y, z, qx, qy, qz]` for SE3.
    pub information: DMatrix<f64>,
}

impl PoseGraphEdge {
    pub fn is_loop_closure(&self) -> bool {
        self.to != self.from + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph {
    /// `None` only for an empty file.
    pub dim: Option<Dim>,
    /// Indexed by vertex id.
    pub vertices: Vec<Pose>,
    pub edges: Vec<PoseGraphEdge>,
}

impl PoseGraph {
    pub fn loop_closures(&self) -> usize {
        self.edges.iter().filter(|e| e.is_loop_closure()).count()
    }

    /// Largest entry-wise difference between two graphs of identical shape,
    /// or `None` if the shapes differ.
    pub fn max_abs_diff(&self, other: &PoseGraph) -> Option<f64> {
        if self.dim != other.dim
            || self.vertices.len() != other.vertices.len()
            || self.edges.len() != other.edges.len()
        {
            return None;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.vertices.iter().zip(&other.vertices) {
            worst = worst.max(a.max_abs_diff(b));
        }
        for (a, b) in self.edges.iter().zip(&other.edges) {
            if a.from != b.from || a.to != b.to {
                return None;
            }
            worst = worst.max(a.relative.max_abs_diff(&b.relative));
            worst = worst.max((&a.information - &b.information).abs().max());
        }
        Some(worst)
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct Fields<'a> {
    line: usize,
    tag: &'a str,
    rest: std::str::SplitWhitespace<'a>,
}

impl Fields<'_> {
    fn float(&mut self) -> Result<f64> {
        let tok = self
            .rest
            .next()
            .ok_or_else(|| parse_error(self.line, format!("{}: too few fields", self.tag)))?;
        tok.parse()
            .map_err(|_| parse_error(self.line, format!("{}: bad number {tok:?}", self.tag)))
    }

    fn index(&mut self) -> Result<usize> {
        let tok = self
            .rest
            .next()
            .ok_or_else(|| parse_error(self.line, format!("{}: too few fields", self.tag)))?;
        tok.parse()
            .map_err(|_| parse_error(self.line, format!("{}: bad id {tok:?}", self.tag)))
    }

    fn floats<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.float()?;
        }
        Ok(out)
    }

    fn finish(mut self) -> Result<()> {
        match self.rest.next() {
            None => Ok(()),
            Some(_) => Err(parse_error(self.line, format!("{}: too many fields", self.tag))),
        }
    }
}

fn upper_triangular(n: usize, values: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = values[k];
            m[(j, i)] = values[k];
            k += 1;
        }
    }
    m
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.abs().max().max(1.0);
    m.clone().symmetric_eigenvalues().iter().all(|&e| e >= -1e-9 * scale)
}

pub fn parse_g2o(text: &str) -> Result<PoseGraph> {
    let mut dim: Option<Dim> = None;
    let mut vertices = BTreeMap::new();
    let mut edges = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut rest = content.split_whitespace();
        let tag = rest.next().expect("non-empty line");
        let mut f = Fields { line, tag, rest };
        let record_dim = match tag {
            "VERTEX_SE2" | "EDGE_SE2" => Dim::Two,
            "VERTEX_SE3:QUAT" | "EDGE_SE3:QUAT" => Dim::Three,
            other => return Err(parse_error(line, format!("unknown record tag {other:?}"))),
        };
        match dim {
            None => dim = Some(record_dim),
            Some(d) if d != record_dim => {
                return Err(parse_error(line, format!("{tag} in a {d}D graph")));
            }
            _ => {}
        }
        match tag {
            "VERTEX_SE2" => {
                let id = f.index()?;
                let [x, y, th] = f.floats::<3>()?;
                f.finish()?;
                if vertices.insert(id, Pose::planar(th, x, y)).is_some() {
                    return Err(parse_error(line, format!("duplicate vertex {id}")));
                }
            }
            "VERTEX_SE3:QUAT" => {
                let id = f.index()?;
                let v = f.floats::<7>()?;
                f.finish()?;
                let pose = quat_pose(line, &v)?;
                if vertices.insert(id, pose).is_some() {
                    return Err(parse_error(line, format!("duplicate vertex {id}")));
                }
            }
            "EDGE_SE2" => {
                let (from, to) = (f.index()?, f.index()?);
                let [x, y, th] = f.floats::<3>()?;
                let info = f.floats::<6>()?;
                f.finish()?;
                edges.push(edge(line, from, to, Pose::planar(th, x, y), upper_triangular(3, &info)));
            }
            _ => {
                let (from, to) = (f.index()?, f.index()?);
                let v = f.floats::<7>()?;
                let info = f.floats::<21>()?;
                f.finish()?;
                edges.push(edge(line, from, to, quat_pose(line, &v)?, upper_triangular(6, &info)));
            }
        }
    }
    for (expect, &id) in vertices.keys().enumerate() {
        if id != expect {
            return Err(Error::InvalidArgument(format!(
                "vertex ids must be dense from 0; missing id {expect}"
            )));
        }
    }
    let vertices: Vec<Pose> = vertices.into_values().collect();
    for e in &edges {
        for id in [e.from, e.to] {
            if id >= vertices.len() {
                return Err(Error::IndexOutOfRange {
                    what: "vertex",
                    index: id,
                    limit: vertices.len(),
                });
            }
        }
    }
    Ok(PoseGraph { dim, vertices, edges })
}

fn quat_pose(line: usize, v: &[f64; 7]) -> Result<Pose> {
    Pose::from_quaternion_xyzw([v[3], v[4], v[5], v[6]], Vector3::new(v[0], v[1], v[2]))
        .map_err(|e| parse_error(line, e.to_string()))
}

fn edge(line: usize, from: usize, to: usize, relative: Pose, information: DMatrix<f64>) -> PoseGraphEdge {
    if !is_psd(&information) {
        log::warn!("line {line}: information matrix of edge {from}->{to} is not positive semidefinite");
    }
    PoseGraphEdge {
        from,
        to,
        relative,
        information,
    }
}

pub fn load_g2o(path: impl AsRef<Path>) -> Result<PoseGraph> {
    parse_g2o(&fs::read_to_string(path)?)
}

fn push_upper(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let _ = write!(out, " {:?}", m[(i, j)]);
        }
    }
}

fn push_pose(out: &mut String, p: &Pose) {
    let t = p.translation();
    match p.dim() {
        Dim::Two => {
            let _ = write!(out, " {:?} {:?} {:?}", t.x, t.y, p.heading());
        }
        Dim::Three => {
            let q = p.quaternion();
            let _ = write!(
                out,
                " {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                t.x, t.y, t.z, q.i, q.j, q.k, q.w
            );
        }
    }
}

/// g2o text with full float precision; parses back to the same graph.
pub fn write_g2o(graph: &PoseGraph) -> String {
    let (vtag, etag) = match graph.dim {
        Some(Dim::Three) => ("VERTEX_SE3:QUAT", "EDGE_SE3:QUAT"),
        _ => ("VERTEX_SE2", "EDGE_SE2"),
    };
    let mut out = String::new();
    for (id, v) in graph.vertices.iter().enumerate() {
        let _ = write!(out, "{vtag} {id}");
        push_pose(&mut out, v);
        out.push('\n');
    }
    for e in &graph.edges {
        let _ = write!(out, "{etag} {} {}", e.from, e.to);
        push_pose(&mut out, &e.relative);
        push_upper(&mut out, &e.information);
        out.push('\n');
    }
    out
}

pub fn save_g2o(graph: &PoseGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_g2o(graph))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SE2: &str = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1.5 -0.25 0.3\nEDGE_SE2 0 1 1.5 -0.25 0.3 500 1 0 400 2 900\n";

    #[test]
    fn parses_se2_fields() {
        let g = parse_g2o(SE2).unwrap();
        assert_eq!(g.dim, Some(Dim::Two));
        assert_eq!(g.vertices.len(), 2);
        assert_eq!(g.edges.len(), 1);
        let e = &g.edges[0];
        assert_eq!((e.from, e.to), (0, 1));
        assert_eq!(e.relative.translation().x, 1.5);
        assert_eq!(e.relative.translation().y, -0.25);
        assert!((e.relative.heading() - 0.3).abs() < 1e-15);
        assert_eq!(e.information[(0, 0)], 500.0);
        assert_eq!(e.information[(1, 0)], 1.0);
        assert_eq!(e.information[(0, 1)], 1.0);
        assert_eq!(e.information[(1, 2)], 2.0);
        assert_eq!(e.information[(2, 2)], 900.0);
        assert!(!e.is_loop_closure());
    }

    #[test]
    fn normalizes_quaternions() {
        let text = "VERTEX_SE3:QUAT 0 1 2 3 0 0 0 2\n";
        let g = parse_g2o(text).unwrap();
        assert!(g.vertices[0].orthogonality_residual() < 1e-12);
        assert!(g.vertices[0].rotation().is_identity(1e-12));
    }

    #[test]
    fn empty_file() {
        let g = parse_g2o("").unwrap();
        assert!(g.vertices.is_empty() && g.edges.is_empty());
        assert_eq!(parse_g2o(&write_g2o(&g)).unwrap(), g);
    }

    #[test]
    fn unknown_tag_names_line() {
        let err = parse_g2o("# comment\n\nVERTEX_SE2 0 0 0 0\nFIX 0\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("FIX"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_records() {
        assert!(parse_g2o("VERTEX_SE2 0 0 0\n").is_err());
        assert!(parse_g2o("VERTEX_SE2 0 0 0 0 0\n").is_err());
        assert!(parse_g2o("VERTEX_SE2 0 0 x 0\n").is_err());
        assert!(parse_g2o("VERTEX_SE2 1 0 0 0\n").is_err());
        assert!(parse_g2o("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 3 1 0 0 1 0 0 1 0 1\n").is_err());
        assert!(parse_g2o("VERTEX_SE2 0 0 0 0\nVERTEX_SE3:QUAT 1 0 0 0 0 0 0 1\n").is_err());
    }

    #[test]
    fn loop_closures_are_flagged() {
        let text = format!("{SE2}VERTEX_SE2 2 0 0 0\nEDGE_SE2 1 2 1 0 0 1 0 0 1 0 1\nEDGE_SE2 0 2 1 0 0 1 0 0 1 0 1\n");
        let g = parse_g2o(&text).unwrap();
        assert_eq!(g.loop_closures(), 1);
    }

    #[test]
    fn non_psd_information_only_warns() {
        let g = parse_g2o("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 0 0 0\nEDGE_SE2 0 1 1 0 0 -1 0 0 1 0 1\n").unwrap();
        assert_eq!(g.edges[0].information[(0, 0)], -1.0);
    }
}
