//! Shapes: mesh ingestion, surface and volume quadrature, the factor μ_∂B.

use crate::error::{Error, Result};
use crate::numerics::quad::{subdivide, tri_area, TriRule};
use crate::numerics::vec3::{add, apply, cross, dot, norm, normalize, scale, sub};
use crate::Vec3;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Where a shape comes from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShapeRef {
    /// Exact unit ball.
    Ball,
    /// Unit icosphere with `n` subdivisions.
    Sphere(u32),
    /// ASCII OFF file.
    File(PathBuf),
}

impl fmt::Display for ShapeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeRef::Ball => write!(f, "ball"),
            ShapeRef::Sphere(n) => write!(f, "sphere(subdiv={n})"),
            ShapeRef::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for ShapeRef {
    type Err = Error;
    fn from_str(s: &str) -> Result<ShapeRef> {
        let t = s.trim();
        if t == "ball" {
            return Ok(ShapeRef::Ball);
        }
        if let Some(inner) = t.strip_prefix("sphere(").and_then(|r| r.strip_suffix(')')) {
            let num = inner.trim().strip_prefix("subdiv=").unwrap_or(inner).trim();
            return num
                .parse::<u32>()
                .map(ShapeRef::Sphere)
                .map_err(|_| Error::Geometry(format!("bad sphere reference {s:?}")));
        }
        if t.is_empty() {
            return Err(Error::Geometry("empty shape reference".into()));
        }
        Ok(ShapeRef::File(PathBuf::from(t)))
    }
}

impl TryFrom<String> for ShapeRef {
    type Error = Error;
    fn try_from(s: String) -> Result<ShapeRef> {
        s.parse()
    }
}

impl From<ShapeRef> for String {
    fn from(r: ShapeRef) -> String {
        r.to_string()
    }
}

/// Exact sphere underlying a builtin icosphere. Quadrature points on the
/// flat panels are pushed radially onto it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereChart {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMeasures {
    pub volume: f64,
    pub area: f64,
}

/// Closed, consistently oriented triangle surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    chart: Option<SphereChart>,
}

impl ShapeMesh {
    /// Validates closure, orientability and outward orientation.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<ShapeMesh> {
        if triangles.len() < 4 {
            return Err(Error::Geometry(format!("{} triangles cannot close a surface", triangles.len())));
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (ti, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Geometry(format!("triangle {ti} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Geometry(format!("triangle {ti} repeats a vertex")));
            }
            for e in 0..3 {
                *edges.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            if count != 1 {
                return Err(Error::Geometry(format!("edge ({a}, {b}) is used {count} times in one direction; surface is not orientable")));
            }
            if edges.get(&(b, a)) != Some(&1) {
                return Err(Error::Geometry(format!("edge ({a}, {b}) has no opposite half-edge; surface is open or inconsistently oriented")));
            }
        }
        let mut normals = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        for (ti, t) in triangles.iter().enumerate() {
            let c = cross(sub(vertices[t[1]], vertices[t[0]]), sub(vertices[t[2]], vertices[t[0]]));
            let a = 0.5 * norm(c);
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Geometry(format!("triangle {ti} is degenerate")));
            }
            normals.push(scale(c, 0.5 / a));
            areas.push(a);
        }
        let mesh = ShapeMesh {
            vertices,
            triangles,
            normals,
            areas,
            chart: None,
        };
        let v = mesh.signed_volume();
        if !(v > 0.0) {
            return Err(Error::Geometry(format!("signed volume {v} is not positive; normals point inward")));
        }
        Ok(mesh)
    }

    /// Unit icosphere with `n` midpoint subdivisions: `10·4ⁿ + 2` vertices.
    pub fn icosphere(n: u32) -> ShapeMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let base: [Vec3; 12] = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut vertices: Vec<Vec3> = base.iter().map(|&v| normalize(v)).collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..n {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
                *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    vertices.push(normalize(add(vertices[a], vertices[b])));
                    vertices.len() - 1
                })
            };
            for &[a, b, c] in &faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let mut mesh = ShapeMesh::new(vertices, faces).expect("icosphere is a valid closed surface");
        mesh.chart = Some(SphereChart {
            center: [0.0; 3],
            radius: 1.0,
        });
        mesh
    }

    pub fn parse_off(text: &str) -> Result<ShapeMesh> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split_whitespace())
            .peekable();
        let bad = |m: &str| Error::Geometry(format!("malformed OFF: {m}"));
        if tokens.peek() == Some(&"OFF") {
            tokens.next();
        }
        let mut count = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad(&format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|_| bad(&format!("bad {what}")))
        };
        let nv = count("vertex count")?;
        let nf = count("face count")?;
        let _ne = count("edge count")?;
        let mut num = || -> Result<f64> {
            tokens
                .next()
                .ok_or_else(|| bad("truncated data"))?
                .parse::<f64>()
                .map_err(|_| bad("bad number"))
        };
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([num()?, num()?, num()?]);
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            let k = num()?;
            if k != 3.0 {
                return Err(bad("only triangular faces are supported"));
            }
            let mut t = [0usize; 3];
            for v in &mut t {
                let x = num()?;
                if x < 0.0 || x.fract() != 0.0 {
                    return Err(bad("bad vertex index"));
                }
                *v = x as usize;
            }
            triangles.push(t);
        }
        ShapeMesh::new(vertices, triangles)
    }

    pub fn read_off(path: &Path) -> Result<ShapeMesh> {
        let text = std::fs::read_to_string(path)?;
        ShapeMesh::parse_off(&text)
    }

    pub fn to_off(&self) -> String {
        let mut s = format!("OFF\n{} {} 0\n", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            s.push_str(&format!("{:?} {:?} {:?}\n", v[0], v[1], v[2]));
        }
        for t in &self.triangles {
            s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
        }
        s
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }
    pub fn chart(&self) -> Option<&SphereChart> {
        self.chart.as_ref()
    }

    /// The same panels treated as a plain polyhedron.
    pub fn without_chart(&self) -> ShapeMesh {
        ShapeMesh {
            chart: None,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn centroid(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        scale(add(add(a, b), c), 1.0 / 3.0)
    }

    /// Volume of the polyhedron.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| dot(self.vertices[t[0]], cross(self.vertices[t[1]], self.vertices[t[2]])))
            .sum::<f64>()
            / 6.0
    }

    /// Polyhedral volume and area, ignoring any chart.
    pub fn flat_measures(&self) -> ShapeMeasures {
        ShapeMeasures {
            volume: self.signed_volume(),
            area: self.areas.iter().sum(),
        }
    }

    fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3, chart: Option<SphereChart>) -> ShapeMesh {
        let vertices: Vec<Vec3> = self.vertices.iter().map(|&v| f(v)).collect();
        let mut m = ShapeMesh::new(vertices, self.triangles.clone()).expect("similarity keeps a valid mesh valid");
        m.chart = chart;
        m
    }

    pub fn scaled(&self, s: f64) -> ShapeMesh {
        let chart = self.chart.map(|c| SphereChart {
            center: scale(c.center, s),
            radius: c.radius * s,
        });
        self.map_vertices(|v| scale(v, s), chart)
    }

    pub fn rotated(&self, m: &[[f64; 3]; 3]) -> ShapeMesh {
        let chart = self.chart.map(|c| SphereChart {
            center: apply(m, c.center),
            radius: c.radius,
        });
        self.map_vertices(|v| apply(m, v), chart)
    }

    pub fn translated(&self, t: Vec3) -> ShapeMesh {
        let chart = self.chart.map(|c| SphereChart {
            center: add(c.center, t),
            radius: c.radius,
        });
        self.map_vertices(|v| add(v, t), chart)
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    /// Generalized winding number by solid angles: 1 inside, 0 outside.
    pub fn winding_number(&self, p: Vec3) -> f64 {
        self.triangles
            .iter()
            .map(|t| crate::numerics::quad::solid_angle(p, self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]))
            .sum::<f64>()
            / (4.0 * PI)
    }

    /// Triangles sharing at least one vertex with each triangle (self included).
    pub fn vertex_neighbours(&self) -> Vec<Vec<usize>> {
        let mut by_vertex = vec![Vec::new(); self.vertices.len()];
        for (i, t) in self.triangles.iter().enumerate() {
            for &v in t {
                by_vertex[v].push(i);
            }
        }
        self.triangles
            .iter()
            .map(|t| {
                let mut n: Vec<usize> = t.iter().flat_map(|&v| by_vertex[v].iter().copied()).collect();
                n.sort_unstable();
                n.dedup();
                n
            })
            .collect()
    }
}

/// Quadrature node on the surface: position, outward normal, weight.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceNode {
    pub x: Vec3,
    pub normal: Vec3,
    pub weight: f64,
}

fn push_nodes(tri: &[Vec3; 3], flat_normal: Vec3, rule: &TriRule, chart: Option<&SphereChart>, out: &mut Vec<SurfaceNode>) {
    let area = tri_area(tri);
    for (p, w) in rule.points(tri).into_iter().zip(&rule.weights) {
        match chart {
            None => out.push(SurfaceNode {
                x: p,
                normal: flat_normal,
                weight: area * w,
            }),
            Some(c) => {
                let d = sub(p, c.center);
                let r = norm(d);
                let u = scale(d, 1.0 / r);
                // Jacobian of the radial projection from the panel plane.
                let jac = c.radius * c.radius * dot(flat_normal, d) / (r * r * r);
                out.push(SurfaceNode {
                    x: add(c.center, scale(u, c.radius)),
                    normal: u,
                    weight: area * w * jac,
                });
            }
        }
    }
}

fn rule_for(order: usize) -> Result<TriRule> {
    TriRule::new(order).ok_or_else(|| Error::Domain(format!("quadrature order must be 1, 3 or 7, got {order}")))
}

/// Quadrature nodes of one triangle, refined `levels` times.
pub fn triangle_nodes(mesh: &ShapeMesh, i: usize, order: usize, levels: usize) -> Result<Vec<SurfaceNode>> {
    let rule = rule_for(order)?;
    let mut out = Vec::new();
    for sub_t in subdivide(&mesh.triangle(i), levels) {
        push_nodes(&sub_t, mesh.normals[i], &rule, mesh.chart.as_ref(), &mut out);
    }
    Ok(out)
}

/// Nodes of every triangle, grouped in triangle order.
pub fn surface_nodes(mesh: &ShapeMesh, order: usize) -> Result<Vec<SurfaceNode>> {
    let rule = rule_for(order)?;
    let mut out = Vec::with_capacity(mesh.len() * rule.weights.len());
    for i in 0..mesh.len() {
        push_nodes(&mesh.triangle(i), mesh.normals[i], &rule, mesh.chart.as_ref(), &mut out);
    }
    Ok(out)
}

/// `(|B|, |∂B|)`: area sum and `Σ x·ν dσ / 3`. Meshes carrying a sphere chart
/// are integrated on the sphere itself.
pub fn shape_measures(mesh: &ShapeMesh) -> ShapeMeasures {
    if mesh.chart.is_none() {
        return mesh.flat_measures();
    }
    let nodes = surface_nodes(mesh, 7).expect("order 7 exists");
    let area = nodes.iter().map(|n| n.weight).sum();
    let volume = nodes.iter().map(|n| n.weight * dot(n.x, n.normal)).sum::<f64>() / 3.0;
    ShapeMeasures { volume, area }
}

/// `μ_∂B = |∂B|⁻¹ ∬ (x−y)·ν(x)/|x−y| dσ(x)dσ(y)`.
///
/// Product rule of the given order; pairs of triangles sharing a vertex use
/// the x-triangle subdivided twice.
pub fn mu_shape(mesh: &ShapeMesh, quad_order: usize) -> Result<f64> {
    let nodes = surface_nodes(mesh, quad_order)?;
    let q = nodes.len() / mesh.len();
    let ys: Vec<[f64; 4]> = nodes.iter().map(|n| [n.x[0], n.x[1], n.x[2], n.weight]).collect();
    let near = mesh.vertex_neighbours();
    let kernel_sum = |x: &SurfaceNode, ys: &[[f64; 4]]| -> f64 {
        let mut acc = 0.0;
        for y in ys {
            let d = [x.x[0] - y[0], x.x[1] - y[1], x.x[2] - y[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if r2 > 0.0 {
                acc += y[3] * (d[0] * x.normal[0] + d[1] * x.normal[1] + d[2] * x.normal[2]) / r2.sqrt();
            }
        }
        acc
    };
    let partial: Vec<f64> = (0..mesh.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut s = 0.0;
            for x in &nodes[i * q..(i + 1) * q] {
                s += x.weight * kernel_sum(x, &ys);
                for &j in &near[i] {
                    s -= x.weight * kernel_sum(x, &ys[j * q..(j + 1) * q]);
                }
            }
            let fine = triangle_nodes(mesh, i, quad_order, 2)?;
            for x in &fine {
                for &j in &near[i] {
                    s += x.weight * kernel_sum(x, &ys[j * q..(j + 1) * q]);
                }
            }
            Ok(s)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = partial.iter().sum();
    let area: f64 = nodes.iter().map(|n| n.weight).sum();
    Ok(total / area)
}

/// A shape for volume and surface work.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball,
    Mesh(ShapeMesh),
}

pub fn load_shape(r: &ShapeRef) -> Result<Shape> {
    let mesh = match r {
        ShapeRef::Ball => return Ok(Shape::Ball),
        ShapeRef::Sphere(n) => {
            if *n > 7 {
                return Err(Error::Geometry(format!("sphere subdivision {n} is too fine")));
            }
            ShapeMesh::icosphere(*n)
        }
        ShapeRef::File(p) => ShapeMesh::read_off(p)?,
    };
    if mesh.winding_number([0.0; 3]) < 0.5 {
        return Err(Error::Geometry("shape does not contain the origin".into()));
    }
    Ok(Shape::Mesh(mesh))
}

impl Shape {
    pub fn measures(&self) -> ShapeMeasures {
        match self {
            Shape::Ball => ShapeMeasures {
                volume: 4.0 * PI / 3.0,
                area: 4.0 * PI,
            },
            Shape::Mesh(m) => shape_measures(m),
        }
    }

    pub fn mu(&self, quad_order: usize) -> Result<f64> {
        match self {
            Shape::Ball => {
                rule_for(quad_order)?;
                Ok(8.0 * PI / 3.0)
            }
            Shape::Mesh(m) => mu_shape(m, quad_order),
        }
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Ball => ([-1.0; 3], [1.0; 3]),
            Shape::Mesh(m) => m.bounding_box(),
        }
    }

    pub fn mesh(&self) -> Option<&ShapeMesh> {
        match self {
            Shape::Ball => None,
            Shape::Mesh(m) => Some(m),
        }
    }

    /// Surface mesh for boundary work; the ball is represented by an icosphere.
    pub fn surface(&self, ball_subdiv: u32) -> ShapeMesh {
        match self {
            Shape::Ball => ShapeMesh::icosphere(ball_subdiv),
            Shape::Mesh(m) => m.clone(),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Shape::Ball => dot(p, p) < 1.0,
            Shape::Mesh(m) => m.winding_number(p) > 0.5,
        }
    }
}

/// Cubic cell `[i h, (i+1) h] × …` with its inside fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub ijk: [i64; 3],
    pub center: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxelization {
    pub h: f64,
    pub voxels: Vec<Voxel>,
}

impl Voxelization {
    pub fn volume(&self) -> f64 {
        self.voxels.iter().map(|v| v.weight).sum::<f64>() * self.h.powi(3)
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// The same cells for the dilated shape `sB`.
    pub fn scaled(&self, s: f64) -> Voxelization {
        Voxelization {
            h: self.h * s,
            voxels: self
                .voxels
                .iter()
                .map(|v| Voxel {
                    center: scale(v.center, s),
                    ..*v
                })
                .collect(),
        }
    }

    /// Lowest cell index and lattice extent enclosing all cells.
    pub fn lattice(&self) -> ([i64; 3], [usize; 3]) {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for v in &self.voxels {
            for d in 0..3 {
                lo[d] = lo[d].min(v.ijk[d]);
                hi[d] = hi[d].max(v.ijk[d]);
            }
        }
        (lo, [(hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize, (hi[2] - lo[2] + 1) as usize])
    }
}

const SUB: usize = 4;

/// Vertical-ray crossings used for the ray form of the winding number.
struct ColumnOracle<'a> {
    mesh: &'a ShapeMesh,
    boxes: Vec<[f64; 4]>,
}

impl<'a> ColumnOracle<'a> {
    fn new(mesh: &'a ShapeMesh) -> Self {
        let boxes = (0..mesh.len())
            .map(|i| {
                let t = mesh.triangle(i);
                [
                    t[0][0].min(t[1][0]).min(t[2][0]),
                    t[0][0].max(t[1][0]).max(t[2][0]),
                    t[0][1].min(t[1][1]).min(t[2][1]),
                    t[0][1].max(t[1][1]).max(t[2][1]),
                ]
            })
            .collect();
        ColumnOracle { mesh, boxes }
    }

    /// Sorted `(z, ±1)` crossings of the line `(x, y, ·)`; the sign is that of `ν_z`.
    fn crossings(&self, x: f64, y: f64) -> Vec<(f64, i32)> {
        let v = &self.mesh.vertices;
        // Edge function evaluated on the canonical vertex order, so both
        // triangles sharing an edge see bit-identical values.
        let edge = |a: usize, b: usize| -> f64 {
            let (p, q, s) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
            s * ((v[q][0] - v[p][0]) * (y - v[p][1]) - (v[q][1] - v[p][1]) * (x - v[p][0]))
        };
        let accept = |a: usize, b: usize| -> bool {
            let dx = v[b][0] - v[a][0];
            let dy = v[b][1] - v[a][1];
            dy < 0.0 || (dy == 0.0 && dx < 0.0)
        };
        let mut out = Vec::new();
        for (i, t) in self.mesh.triangles.iter().enumerate() {
            let b = &self.boxes[i];
            if x < b[0] || x > b[1] || y < b[2] || y > b[3] {
                continue;
            }
            let nz = self.mesh.normals[i][2];
            if nz == 0.0 {
                continue;
            }
            // Orient counter-clockwise in the xy projection.
            let [a, mut bb, mut c] = *t;
            if nz < 0.0 {
                std::mem::swap(&mut bb, &mut c);
            }
            let es = [edge(a, bb), edge(bb, c), edge(c, a)];
            let pairs = [(a, bb), (bb, c), (c, a)];
            let inside = es
                .iter()
                .zip(&pairs)
                .all(|(&e, &(p, q))| e > 0.0 || (e == 0.0 && accept(p, q)));
            if !inside {
                continue;
            }
            let tot = es[0] + es[1] + es[2];
            // Barycentric weights: edge opposite vertex.
            let z = (es[1] * v[a][2] + es[2] * v[bb][2] + es[0] * v[c][2]) / tot;
            out.push((z, if nz > 0.0 { 1 } else { -1 }));
        }
        out.sort_by(|p, q| p.0.total_cmp(&q.0));
        out
    }
}

fn winding_from(crossings: &[(f64, i32)], z: f64) -> i32 {
    crossings.iter().filter(|c| c.0 > z).map(|c| c.1).sum()
}

/// Cubic-cell filling of the shape over its bounding box.
pub fn voxelize(shape: &Shape, h: f64) -> Result<Voxelization> {
    let (lo, hi) = shape.bounding_box();
    voxelize_in(shape, h, lo, hi)
}

/// Cubic-cell filling restricted to the box `[lo, hi]`.
///
/// Cells are classified by their corners; cells with disagreeing corners get
/// `4³` interior samples.
pub fn voxelize_in(shape: &Shape, h: f64, lo: Vec3, hi: Vec3) -> Result<Voxelization> {
    let (slo, shi) = shape.bounding_box();
    let extent = (0..3).map(|d| shi[d] - slo[d]).fold(f64::INFINITY, f64::min);
    if !(h > 0.0) || h > extent / 4.0 {
        return Err(Error::Resolution(format!("cell size {h} exceeds a quarter of the shape extent {extent}")));
    }
    let mut i0 = [0i64; 3];
    let mut n = [0usize; 3];
    for d in 0..3 {
        let a = lo[d].max(slo[d]);
        let b = hi[d].min(shi[d]);
        if !(b > a) {
            return Err(Error::Geometry("shape does not intersect the voxel box".into()));
        }
        i0[d] = (a / h).floor() as i64;
        let i1 = (b / h).ceil() as i64;
        n[d] = (i1 - i0[d]).max(1) as usize;
    }
    let coord = |i: i64, frac: f64| -> f64 { (i as f64 + frac) * h };
    let in_box = |p: Vec3| (0..3).all(|d| p[d] >= lo[d] && p[d] <= hi[d]);

    // Inside test for a batch of points sharing one vertical column.
    let oracle = shape.mesh().map(ColumnOracle::new);
    let classify_column = |x: f64, y: f64, zs: &[f64]| -> Vec<bool> {
        match &oracle {
            None => zs.iter().map(|&z| x * x + y * y + z * z < 1.0).collect(),
            Some(o) => {
                let c = o.crossings(x, y);
                zs.iter().map(|&z| winding_from(&c, z) > 0).collect()
            }
        }
    };

    // Corner classification, one column per (i, j).
    let corner_z: Vec<f64> = (0..=n[2] as i64).map(|k| coord(i0[2] + k, 0.0)).collect();
    let cols: Vec<(usize, usize)> = (0..=n[0]).flat_map(|i| (0..=n[1]).map(move |j| (i, j))).collect();
    let corners: Vec<Vec<bool>> = cols
        .par_iter()
        .map(|&(i, j)| classify_column(coord(i0[0] + i as i64, 0.0), coord(i0[1] + j as i64, 0.0), &corner_z))
        .collect();
    let corner = |i: usize, j: usize, k: usize| corners[i * (n[1] + 1) + j][k];

    let mut full = Vec::new();
    let mut mixed: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let mut cnt = 0;
                for (a, b, c) in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)] {
                    cnt += corner(i + a, j + b, k + c) as usize;
                }
                if cnt == 8 {
                    full.push([i, j, k]);
                } else if cnt > 0 {
                    mixed.entry((i, j)).or_default().push(k);
                }
            }
        }
    }

    // Subsample mixed cells column by column.
    let mixed_cols: Vec<((usize, usize), Vec<usize>)> = mixed.into_iter().collect();
    let partial: Vec<Vec<([usize; 3], f64)>> = mixed_cols
        .par_iter()
        .map(|((i, j), ks)| {
            let mut counts = vec![0usize; ks.len()];
            let mut zs = Vec::with_capacity(ks.len() * SUB);
            for &k in ks {
                for c in 0..SUB {
                    zs.push(coord(i0[2] + k as i64, (c as f64 + 0.5) / SUB as f64));
                }
            }
            for a in 0..SUB {
                for b in 0..SUB {
                    let x = coord(i0[0] + *i as i64, (a as f64 + 0.5) / SUB as f64);
                    let y = coord(i0[1] + *j as i64, (b as f64 + 0.5) / SUB as f64);
                    let inside = classify_column(x, y, &zs);
                    for (m, _) in ks.iter().enumerate() {
                        for c in 0..SUB {
                            let p = [x, y, zs[m * SUB + c]];
                            if inside[m * SUB + c] && in_box(p) {
                                counts[m] += 1;
                            }
                        }
                    }
                }
            }
            ks.iter()
                .zip(counts)
                .filter(|(_, c)| *c > 0)
                .map(|(&k, c)| ([*i, *j, k], c as f64 / (SUB * SUB * SUB) as f64))
                .collect()
        })
        .collect();

    let mut cells: Vec<([usize; 3], f64)> = full.into_iter().map(|c| (c, 1.0)).collect();
    cells.extend(partial.into_iter().flatten());
    cells.sort_by_key(|a| a.0);
    let voxels: Vec<Voxel> = cells
        .into_iter()
        .map(|(c, w)| {
            let ijk = [i0[0] + c[0] as i64, i0[1] + c[1] as i64, i0[2] + c[2] as i64];
            Voxel {
                ijk,
                center: [coord(ijk[0], 0.5), coord(ijk[1], 0.5), coord(ijk[2], 0.5)],
                weight: w,
            }
        })
        .collect();
    if voxels.is_empty() {
        return Err(Error::Geometry("voxelization is empty".into()));
    }
    Ok(Voxelization { h, voxels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::vec3::rotation;

    const CUBE_OFF: &str = "OFF
# unit cube centred at the origin
8 12 0
-0.5 -0.5 -0.5
0.5 -0.5 -0.5
0.5 0.5 -0.5
-0.5 0.5 -0.5
-0.5 -0.5 0.5
0.5 -0.5 0.5
0.5 0.5 0.5
-0.5 0.5 0.5
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 2 3 7
3 2 7 6
3 1 2 6
3 1 6 5
3 0 4 7
3 0 7 3
";

    fn cube() -> ShapeMesh {
        ShapeMesh::parse_off(CUBE_OFF).unwrap()
    }

    #[test]
    fn shape_ref_round_trip() {
        for s in ["ball", "sphere(subdiv=3)", "meshes/bean.off"] {
            let r: ShapeRef = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert_eq!("sphere(2)".parse::<ShapeRef>().unwrap(), ShapeRef::Sphere(2));
        let j = serde_json::to_string(&ShapeRef::Sphere(4)).unwrap();
        assert_eq!(j, "\"sphere(subdiv=4)\"");
    }

    #[test]
    fn icosphere_counts() {
        for n in 0..4 {
            let m = ShapeMesh::icosphere(n);
            assert_eq!(m.vertices().len(), 10 * 4usize.pow(n) + 2);
            assert_eq!(m.len(), 20 * 4usize.pow(n));
            assert!(m.vertices().iter().all(|v| (norm(*v) - 1.0).abs() < 1e-15));
        }
        let m = ShapeMesh::icosphere(3);
        assert!((m.signed_volume() / (4.0 * PI / 3.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn cube_is_exact() {
        let m = cube();
        let s = shape_measures(&m);
        assert!((s.volume - 1.0).abs() < 1e-15);
        assert!((s.area - 6.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_or_open_meshes_rejected() {
        let m = cube();
        let flipped: Vec<[usize; 3]> = m.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect();
        assert!(matches!(ShapeMesh::new(m.vertices().to_vec(), flipped), Err(Error::Geometry(_))));
        let open = m.triangles()[..11].to_vec();
        assert!(matches!(ShapeMesh::new(m.vertices().to_vec(), open), Err(Error::Geometry(_))));
        let mut mixed = m.triangles().to_vec();
        mixed[0] = [mixed[0][0], mixed[0][2], mixed[0][1]];
        assert!(ShapeMesh::new(m.vertices().to_vec(), mixed).is_err());
    }

    #[test]
    fn off_round_trip() {
        let m = ShapeMesh::icosphere(1).without_chart();
        let back = ShapeMesh::parse_off(&m.to_off()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn winding_number_inside_outside() {
        let m = ShapeMesh::icosphere(2);
        assert!((m.winding_number([0.1, 0.2, -0.3]) - 1.0).abs() < 1e-12);
        assert!(m.winding_number([1.5, 0.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn mu_of_ball_and_chart() {
        assert!((Shape::Ball.mu(3).unwrap() - 8.0 * PI / 3.0).abs() < 1e-15);
        let m = ShapeMesh::icosphere(2);
        let mu = mu_shape(&m, 3).unwrap();
        assert!((mu / (8.0 * PI / 3.0) - 1.0).abs() < 1e-3, "{mu}");
        assert!(mu_shape(&m, 2).is_err());
    }

    #[test]
    fn mu_scaling_and_rotation() {
        let m = ShapeMesh::icosphere(1).without_chart();
        let base = mu_shape(&m, 3).unwrap();
        let s = 2.5;
        let scaled = mu_shape(&m.scaled(s), 3).unwrap();
        assert!((scaled / (s * s * base) - 1.0).abs() < 1e-10);
        let r = rotation([1.0, 2.0, -0.5], 0.7);
        let rot = mu_shape(&m.rotated(&r), 3).unwrap();
        assert!((rot / base - 1.0).abs() < 1e-10);
        let ms = shape_measures(&m.rotated(&r));
        let m0 = shape_measures(&m);
        assert!((ms.volume / m0.volume - 1.0).abs() < 1e-10 && (ms.area / m0.area - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cube_mu_self_converges() {
        let m = cube();
        let a = mu_shape(&m, 3).unwrap();
        let b = mu_shape(&m, 7).unwrap();
        assert!(a > 0.0 && (a - b).abs() / b < 1e-2, "{a} {b}");
    }

    #[test]
    fn voxelized_cube_is_exact() {
        let shape = Shape::Mesh(cube());
        let v = voxelize(&shape, 0.125).unwrap();
        assert!((v.volume() - 1.0).abs() < 1e-14, "{}", v.volume());
        assert!(v.voxels.iter().all(|c| c.weight == 1.0));
    }

    #[test]
    fn voxelized_ball_volume() {
        let v = voxelize(&Shape::Ball, 1.0 / 16.0).unwrap();
        assert!((v.volume() / (4.0 * PI / 3.0) - 1.0).abs() < 0.01);
        let mesh = Shape::Mesh(ShapeMesh::icosphere(3));
        let vm = voxelize(&mesh, 1.0 / 8.0).unwrap();
        let target = ShapeMesh::icosphere(3).signed_volume();
        assert!((vm.volume() / target - 1.0).abs() < 0.02, "{} {target}", vm.volume());
    }

    #[test]
    fn voxelize_errors() {
        assert!(matches!(voxelize(&Shape::Ball, 0.9), Err(Error::Resolution(_))));
        let r = voxelize_in(&Shape::Ball, 0.1, [5.0; 3], [6.0; 3]);
        assert!(matches!(r, Err(Error::Geometry(_))));
    }
}
