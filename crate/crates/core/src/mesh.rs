//! Fixed-topology triangulation of the three-layer head.
//!
//! One reference mesh of the unit disk is generated per (refinement,
//! electrode layout). Every anatomy is obtained by moving its nodes, so all
//! meshes derived from one reference share node indices, triangles and layer
//! tags, and nodal fields on different geometries can be compared entrywise.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::shape::{Layer, RadiusProfile, ShapeBasis};

/// Layout of one electrode on the reference circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectrodeTemplate {
    /// Intended centre angle (rad).
    pub center: f64,
    /// Angular half-width on the reference circle (rad).
    pub half_width: f64,
    /// Position of the first electrode node in the boundary node list.
    pub first: usize,
    /// Number of boundary edges under the electrode.
    pub segments: usize,
}

impl ElectrodeTemplate {
    pub fn start(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn end(&self) -> f64 {
        self.center + self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReferenceMeshParams {
    pub refinement: u32,
    pub electrodes: usize,
    /// Electrode half-width (rad) on the reference circle.
    pub electrode_half_width: f64,
    /// Reference radii of the scalp/skull and skull/brain interfaces.
    pub skull_radius: f64,
    pub brain_radius: f64,
}

impl ReferenceMeshParams {
    /// Interfaces placed at the base anatomy's radius ratios (8.2/9 and 7.5/9).
    pub fn new(refinement: u32, electrodes: usize, electrode_half_width: f64) -> Self {
        Self {
            refinement,
            electrodes,
            electrode_half_width,
            skull_radius: 0.082 / 0.09,
            brain_radius: 0.075 / 0.09,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RingKind {
    Boundary,
    Scalp,
    SkullInterface,
    Skull,
    BrainInterface,
    Brain,
    Center,
}

/// Reference triangulation of the unit disk.
#[derive(Debug, Clone)]
pub struct ReferenceMesh<T> {
    pub params: ReferenceMeshParams,
    /// Unit-disk coordinates.
    pub nodes: Vec<[T; 2]>,
    /// Reference polar coordinates `(ρ, φ)` of every node.
    pub polar: Vec<(f64, f64)>,
    pub triangles: Vec<[usize; 3]>,
    pub triangle_layer: Vec<Layer>,
    /// Layer of each node; interface nodes belong to the inner layer.
    pub node_layer: Vec<Layer>,
    /// Nodes on the scalp/skull and skull/brain interfaces.
    pub interface_rings: [Vec<usize>; 2],
    /// Boundary nodes in counter-clockwise order starting at electrode 0.
    pub boundary_nodes: Vec<usize>,
    pub electrodes: Vec<ElectrodeTemplate>,
    ring_kind: Vec<RingKind>,
}

pub fn build_reference_mesh<T: Real>(
    refinement: u32,
    electrodes: usize,
    electrode_half_width: f64,
) -> Result<ReferenceMesh<T>> {
    build_reference_mesh_with(ReferenceMeshParams::new(refinement, electrodes, electrode_half_width))
}

pub fn build_reference_mesh_with<T: Real>(params: ReferenceMeshParams) -> Result<ReferenceMesh<T>> {
    let m = params.electrodes;
    let w = params.electrode_half_width;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 electrodes, got {m}")));
    }
    if !(w > 0.0) {
        return Err(Error::InvalidArgument(format!("electrode half-width {w} must be positive")));
    }
    if params.refinement > 8 {
        return Err(Error::InvalidArgument(format!("refinement {} too large", params.refinement)));
    }
    let (rho_s, rho_b) = (params.skull_radius, params.brain_radius);
    if !(0.0 < rho_b && rho_b < rho_s && rho_s < 1.0) {
        return Err(Error::InvalidArgument("interface radii must satisfy 0 < brain < skull < 1".into()));
    }
    let pitch = 2.0 * PI / m as f64;
    let gap = pitch - 2.0 * w;
    if gap <= 0.0 {
        return Err(Error::OverlappingElectrodes(format!(
            "{m} electrodes of half-width {w:.4} rad do not fit on the circle"
        )));
    }

    let seg_e = 1usize << (params.refinement + 1);
    let h_e = 2.0 * w / seg_e as f64;
    let h_out = 2.0 * h_e;
    let seg_g = ((gap / h_out).ceil() as usize).max(1);

    let mut boundary_angles = Vec::with_capacity(m * (seg_e + seg_g));
    let mut templates = Vec::with_capacity(m);
    for k in 0..m {
        let center = pitch * k as f64;
        let start = center - w;
        templates.push(ElectrodeTemplate { center, half_width: w, first: boundary_angles.len(), segments: seg_e });
        for s in 0..seg_e {
            boundary_angles.push(start + 2.0 * w * s as f64 / seg_e as f64);
        }
        for s in 0..seg_g {
            boundary_angles.push(center + w + gap * s as f64 / seg_g as f64);
        }
    }

    // Ring radii, outermost first.
    let mut rings: Vec<(f64, RingKind)> = vec![(1.0, RingKind::Boundary)];
    let n_scalp = (((1.0 - rho_s) / h_out).ceil() as usize).max(1);
    let n_b = boundary_angles.len();
    let uniform: Vec<f64> = (0..n_b).map(|k| boundary_angles[0] + 2.0 * PI * k as f64 / n_b as f64).collect();
    for i in 1..n_scalp {
        rings.push((1.0 - (1.0 - rho_s) * i as f64 / n_scalp as f64, RingKind::Scalp));
    }
    rings.push((rho_s, RingKind::SkullInterface));
    let n_skull = (((rho_s - rho_b) / h_out).ceil() as usize).max(1);
    for i in 1..n_skull {
        rings.push((rho_s - (rho_s - rho_b) * i as f64 / n_skull as f64, RingKind::Skull));
    }
    rings.push((rho_b, RingKind::BrainInterface));
    let h_c = h_out.max((4.0 * h_out).min(rho_b / 3.0));
    let spacing = |rho: f64| h_out + (h_c - h_out) * (1.0 - rho / rho_b);
    let mut offsets = vec![0.0];
    let mut rho = rho_b;
    loop {
        let h = spacing(rho);
        if rho - h <= 0.5 * h {
            break;
        }
        rho -= h;
        offsets.push(rho_b - rho);
    }
    let total = offsets.last().copied().unwrap_or(0.0) + spacing(rho);
    let stretch = rho_b / total;
    for &off in &offsets[1..] {
        rings.push((rho_b - off * stretch, RingKind::Brain));
    }

    // Nodes ring by ring, each ring sorted by angle.
    let mut nodes = Vec::new();
    let mut polar = Vec::new();
    let mut node_layer = Vec::new();
    let mut node_ring_kind = Vec::new();
    let mut ring_nodes: Vec<Vec<(usize, f64)>> = Vec::with_capacity(rings.len());
    for (idx, &(radius, kind)) in rings.iter().enumerate() {
        let angles: Vec<f64> = if matches!(kind, RingKind::Boundary | RingKind::Scalp | RingKind::SkullInterface) {
            // Scalp rings keep the boundary node count and relax towards
            // uniform spacing at the skull interface.
            let s = (1.0 - radius) / (1.0 - rho_s);
            boundary_angles.iter().zip(&uniform).map(|(b, u)| (1.0 - s) * b + s * u).collect()
        } else {
            let h = if radius < rho_b { spacing(radius) } else { h_out };
            // Multiples of M keep the mesh invariant under rotation by one electrode pitch.
            let count = (((2.0 * PI * radius / h) / m as f64).round() as usize).max(6usize.div_ceil(m)) * m;
            let offset = if idx % 2 == 1 { PI / count as f64 } else { 0.0 };
            (0..count).map(|i| offset + 2.0 * PI * i as f64 / count as f64).collect()
        };
        let layer = if radius > rho_s {
            Layer::Scalp
        } else if radius > rho_b {
            Layer::Skull
        } else {
            Layer::Brain
        };
        let mut ids = Vec::with_capacity(angles.len());
        for a in angles {
            ids.push((nodes.len(), a));
            nodes.push([T::lit(radius * a.cos()), T::lit(radius * a.sin())]);
            polar.push((radius, a));
            node_layer.push(layer);
            node_ring_kind.push(kind);
        }
        ring_nodes.push(ids);
    }
    let center = nodes.len();
    nodes.push([T::zero(), T::zero()]);
    polar.push((0.0, 0.0));
    node_layer.push(Layer::Brain);
    node_ring_kind.push(RingKind::Center);

    let mut triangles = Vec::new();
    let mut triangle_layer = Vec::new();
    for r in 0..rings.len() - 1 {
        let inner_radius = rings[r + 1].0;
        let layer = if inner_radius >= rho_s {
            Layer::Scalp
        } else if inner_radius >= rho_b {
            Layer::Skull
        } else {
            Layer::Brain
        };
        let before = triangles.len();
        zip_rings(&ring_nodes[r], &ring_nodes[r + 1], &mut triangles);
        triangle_layer.extend(std::iter::repeat_n(layer, triangles.len() - before));
    }
    let innermost = ring_nodes.last().expect("at least one ring");
    for k in 0..innermost.len() {
        let (a, b) = (innermost[k].0, innermost[(k + 1) % innermost.len()].0);
        triangles.push([center, a, b]);
        triangle_layer.push(Layer::Brain);
    }

    let interface = |kind: RingKind| -> Vec<usize> {
        (0..nodes.len()).filter(|&i| node_ring_kind[i] == kind).collect()
    };
    let interface_rings = [interface(RingKind::SkullInterface), interface(RingKind::BrainInterface)];
    let boundary_nodes = ring_nodes[0].iter().map(|&(i, _)| i).collect();

    let mesh = ReferenceMesh {
        params,
        nodes,
        polar,
        triangles,
        triangle_layer,
        node_layer,
        interface_rings,
        boundary_nodes,
        electrodes: templates,
        ring_kind: node_ring_kind,
    };
    if let Some((t, area)) = worst_triangle(&mesh.nodes, &mesh.triangles) {
        if area <= 0.0 {
            return Err(Error::DeformationFailure { triangle: t, area });
        }
    }
    Ok(mesh)
}

/// Triangulates the annulus between two rings whose nodes are sorted by angle.
fn zip_rings(outer: &[(usize, f64)], inner: &[(usize, f64)], out: &mut Vec<[usize; 3]>) {
    let (na, nb) = (outer.len(), inner.len());
    let two_pi = 2.0 * PI;
    let a0 = outer[0].1;
    let wrap = |x: f64| x - two_pi * ((x - a0 + PI) / two_pi).floor();
    let j0 = (0..nb)
        .min_by(|&i, &j| {
            let di = (wrap(inner[i].1) - a0).abs();
            let dj = (wrap(inner[j].1) - a0).abs();
            di.partial_cmp(&dj).unwrap()
        })
        .unwrap();
    let outer_angle = |i: usize| outer[i % na].1 + two_pi * (i / na) as f64;
    let b0 = wrap(inner[j0].1);
    let inner_angle = |j: usize| {
        let k = j0 + j;
        b0 + inner[k % nb].1 + two_pi * (k / nb) as f64 - inner[j0].1
    };
    let (mut i, mut j) = (0, 0);
    while i < na || j < nb {
        let advance_outer = j == nb || (i < na && outer_angle(i + 1) <= inner_angle(j + 1) + 1e-9);
        let a = outer[i % na].0;
        let b = inner[(j0 + j) % nb].0;
        if advance_outer {
            out.push([a, outer[(i + 1) % na].0, b]);
            i += 1;
        } else {
            out.push([b, a, inner[(j0 + j + 1) % nb].0]);
            j += 1;
        }
    }
}

pub(crate) fn signed_area<T: Real>(p: &[[T; 2]], t: &[usize; 3]) -> T {
    let [a, b, c] = [p[t[0]], p[t[1]], p[t[2]]];
    ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])) * T::lit(0.5)
}

/// Triangle with the smallest signed area, and that area.
fn worst_triangle<T: Real>(nodes: &[[T; 2]], triangles: &[[usize; 3]]) -> Option<(usize, f64)> {
    triangles
        .iter()
        .enumerate()
        .map(|(k, t)| (k, signed_area(nodes, t).to_f64_lossy()))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}

/// Inradius over circumradius; 1/2 for an equilateral triangle.
pub fn triangle_quality<T: Real>(nodes: &[[T; 2]], t: &[usize; 3]) -> T {
    let [a, b, c] = [nodes[t[0]], nodes[t[1]], nodes[t[2]]];
    let len = |p: [T; 2], q: [T; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let (la, lb, lc) = (len(b, c), len(c, a), len(a, b));
    let area = signed_area(nodes, t);
    T::lit(8.0) * area * area / (la * lb * lc * (la + lb + lc))
}

impl<T: Real> ReferenceMesh<T> {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    /// Boundary edges of electrode `m`, oriented counter-clockwise.
    pub fn electrode_edges(&self, m: usize) -> Vec<[usize; 2]> {
        let e = &self.electrodes[m];
        let nb = self.boundary_nodes.len();
        (0..e.segments)
            .map(|s| [self.boundary_nodes[(e.first + s) % nb], self.boundary_nodes[(e.first + s + 1) % nb]])
            .collect()
    }

    /// Number of distinct undirected edges.
    pub fn n_edges(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    pub fn intended_electrode_angles(&self) -> Vec<f64> {
        self.electrodes.iter().map(|e| e.center).collect()
    }
}

/// How electrode extents are placed on a deformed boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElectrodeSizing {
    /// Keep the template's angular half-width.
    Angular,
    /// Choose each half-width so the electrode's boundary polyline has
    /// length `2 * half_length` (m).
    Length(f64),
}

/// Geometry parameters a physical mesh was generated from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeometryProvenance {
    pub alpha: Vec<f64>,
    pub electrode_angles: Vec<f64>,
    pub electrode_half_widths: Vec<f64>,
    pub refinement: u32,
}

/// Physical mesh: reference topology with deformed node coordinates (m).
#[derive(Debug, Clone)]
pub struct Mesh<T> {
    pub reference: Arc<ReferenceMesh<T>>,
    pub nodes: Vec<[T; 2]>,
    pub provenance: GeometryProvenance,
}

impl<T: Real> Mesh<T> {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.reference.n_electrodes()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.reference.triangles
    }

    pub fn triangle_layer(&self) -> &[Layer] {
        &self.reference.triangle_layer
    }

    pub fn node_layer(&self) -> &[Layer] {
        &self.reference.node_layer
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.reference.boundary_nodes
    }

    pub fn interface_rings(&self) -> &[Vec<usize>; 2] {
        &self.reference.interface_rings
    }

    pub fn electrode_edges(&self, m: usize) -> Vec<[usize; 2]> {
        self.reference.electrode_edges(m)
    }

    pub fn electrode_length(&self, m: usize) -> T {
        self.electrode_edges(m).iter().map(|e| dist(self.nodes[e[0]], self.nodes[e[1]])).sum()
    }

    pub fn signed_area(&self, t: usize) -> T {
        signed_area(&self.nodes, &self.reference.triangles[t])
    }

    pub fn min_signed_area(&self) -> T {
        (0..self.triangles().len()).map(|t| self.signed_area(t)).fold(T::infinity(), T::min)
    }

    pub fn min_quality(&self) -> T {
        self.triangles().iter().map(|t| triangle_quality(&self.nodes, t)).fold(T::infinity(), T::min)
    }

    pub fn centroid(&self, t: usize) -> [T; 2] {
        let tri = &self.reference.triangles[t];
        let third = T::lit(1.0 / 3.0);
        let mut c = [T::zero(); 2];
        for &v in tri {
            c[0] += self.nodes[v][0] * third;
            c[1] += self.nodes[v][1] * third;
        }
        c
    }

    /// Lumped (one third of adjacent triangle areas) nodal areas.
    pub fn nodal_areas(&self) -> Vec<T> {
        let mut a = vec![T::zero(); self.n_nodes()];
        let third = T::lit(1.0 / 3.0);
        for (k, t) in self.triangles().iter().enumerate() {
            let s = self.signed_area(k) * third;
            for &v in t {
                a[v] += s;
            }
        }
        a
    }

    /// Node adjacency lists (excluding self).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for t in self.triangles() {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        adj[t[i]].push(t[j]);
                    }
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Euclidean distance from arbitrary points to the boundary polyline.
    pub fn distance_to_boundary(&self, points: &[[T; 2]]) -> Vec<T> {
        let b = self.boundary_nodes();
        let segs: Vec<([T; 2], [T; 2])> =
            (0..b.len()).map(|k| (self.nodes[b[k]], self.nodes[b[(k + 1) % b.len()]])).collect();
        points.iter().map(|&p| segs.iter().map(|&(a, c)| point_segment_distance(p, a, c)).fold(T::infinity(), T::min)).collect()
    }
}

fn dist<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn point_segment_distance<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > T::zero() {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Exact distance from every node to the boundary polyline.
pub fn boundary_distance<T: Real>(mesh: &Mesh<T>) -> Vec<T> {
    let mut d = mesh.distance_to_boundary(&mesh.nodes);
    for &b in mesh.boundary_nodes() {
        d[b] = T::zero();
    }
    d
}

/// Periodic piecewise-linear map between two increasing knot sequences.
struct AngularMap {
    from: Vec<f64>,
    to: Vec<f64>,
}

impl AngularMap {
    fn new(mut from: Vec<f64>, mut to: Vec<f64>) -> Self {
        from.push(from[0] + 2.0 * PI);
        to.push(to[0] + 2.0 * PI);
        Self { from, to }
    }

    fn apply(&self, phi: f64) -> f64 {
        let start = self.from[0];
        let turns = ((phi - start) / (2.0 * PI)).floor();
        let x = phi - 2.0 * PI * turns;
        let k = match self.from.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => return self.to[k] + 2.0 * PI * turns,
            Err(k) => k.clamp(1, self.from.len() - 1) - 1,
        };
        let t = (x - self.from[k]) / (self.from[k + 1] - self.from[k]);
        self.to[k] + t * (self.to[k + 1] - self.to[k]) + 2.0 * PI * turns
    }
}

/// Maps the reference mesh onto the anatomy `S(·; α)` with electrodes
/// centred at `electrode_angles`.
pub fn deform_mesh<T: Real>(
    reference: &Arc<ReferenceMesh<T>>,
    basis: &ShapeBasis<T>,
    alpha: &[T],
    electrode_angles: &[f64],
    sizing: ElectrodeSizing,
) -> Result<Mesh<T>> {
    let profile = basis.nested_profile(alpha)?;
    deform_to_profile(reference, &profile, alpha, electrode_angles, sizing)
}

pub fn deform_to_profile<T: Real>(
    reference: &Arc<ReferenceMesh<T>>,
    profile: &RadiusProfile<T>,
    alpha: &[T],
    electrode_angles: &[f64],
    sizing: ElectrodeSizing,
) -> Result<Mesh<T>> {
    let m = reference.n_electrodes();
    if electrode_angles.len() != m {
        return Err(Error::DimensionMismatch(format!("{} electrode angles for {m} electrodes", electrode_angles.len())));
    }
    let scalp = |theta: f64| profile.interpolate(T::lit(theta))[0].to_f64_lossy();
    let half_widths: Vec<f64> = match sizing {
        ElectrodeSizing::Angular => reference.electrodes.iter().map(|e| e.half_width).collect(),
        ElectrodeSizing::Length(half_length) => electrode_angles
            .iter()
            .zip(&reference.electrodes)
            .map(|(&c, e)| match_half_width(&scalp, c, e.segments, e.half_width, 2.0 * half_length))
            .collect(),
    };

    let mut from = Vec::with_capacity(2 * m);
    let mut to = Vec::with_capacity(2 * m);
    for (k, e) in reference.electrodes.iter().enumerate() {
        from.extend([e.start(), e.end()]);
        to.extend([electrode_angles[k] - half_widths[k], electrode_angles[k] + half_widths[k]]);
    }
    for k in 1..to.len() {
        if to[k] <= to[k - 1] {
            return Err(Error::OverlappingElectrodes(format!("perturbed electrode {} overlaps its neighbour", k / 2)));
        }
    }
    if to[to.len() - 1] >= to[0] + 2.0 * PI {
        return Err(Error::OverlappingElectrodes("last electrode wraps onto the first".into()));
    }
    let map = AngularMap::new(from, to);

    let (rho_s, rho_b) = (reference.params.skull_radius, reference.params.brain_radius);
    let nodes: Vec<[T; 2]> = reference
        .polar
        .iter()
        .zip(&reference.ring_kind)
        .map(|(&(rho, phi), &kind)| {
            if kind == RingKind::Center {
                return [T::zero(), T::zero()];
            }
            let theta = phi + rho * (map.apply(phi) - phi);
            let r = profile.interpolate(T::lit(theta));
            let radius = match kind {
                RingKind::Boundary => r[0],
                RingKind::SkullInterface => r[1],
                RingKind::BrainInterface => r[2],
                _ if rho > rho_s => r[1] + T::lit((rho - rho_s) / (1.0 - rho_s)) * (r[0] - r[1]),
                _ if rho > rho_b => r[2] + T::lit((rho - rho_b) / (rho_s - rho_b)) * (r[1] - r[2]),
                _ => T::lit(rho / rho_b) * r[2],
            };
            let th = T::lit(theta);
            [radius * th.cos(), radius * th.sin()]
        })
        .collect();

    if let Some((t, area)) = worst_triangle(&nodes, &reference.triangles) {
        if area <= 0.0 {
            return Err(Error::DeformationFailure { triangle: t, area });
        }
    }
    Ok(Mesh {
        reference: Arc::clone(reference),
        nodes,
        provenance: GeometryProvenance {
            alpha: alpha.iter().map(|a| a.to_f64_lossy()).collect(),
            electrode_angles: electrode_angles.to_vec(),
            electrode_half_widths: half_widths,
            refinement: reference.params.refinement,
        },
    })
}

/// Half-width whose boundary polyline (with `segments` equal angular steps)
/// has the requested length.
fn match_half_width(scalp: &impl Fn(f64) -> f64, center: f64, segments: usize, guess: f64, length: f64) -> f64 {
    let poly_len = |w: f64| {
        let pts: Vec<[f64; 2]> = (0..=segments)
            .map(|s| {
                let th = center - w + 2.0 * w * s as f64 / segments as f64;
                let r = scalp(th);
                [r * th.cos(), r * th.sin()]
            })
            .collect();
        pts.windows(2).map(|p| ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt()).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.25 * guess, 4.0 * guess);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if poly_len(mid) < length {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::{build_library, compute_pca};

    fn basis() -> ShapeBasis<f64> {
        compute_pca(&build_library::<f64>(12, 128, 4).unwrap(), 5).unwrap()
    }

    #[test]
    fn coarse_mesh_is_a_valid_disk() {
        let r = build_reference_mesh::<f64>(0, 2, 0.0833).unwrap();
        let v = r.n_nodes() as i64;
        let e = r.n_edges() as i64;
        let f = r.triangles.len() as i64;
        assert_eq!(v - e + f, 1);
        for t in &r.triangles {
            assert!(signed_area(&r.nodes, t) > 0.0);
        }
    }

    #[test]
    fn triangle_layers_match_node_radii() {
        let r = build_reference_mesh::<f64>(1, 8, 0.1).unwrap();
        let (rs, rb) = (r.params.skull_radius, r.params.brain_radius);
        for (t, layer) in r.triangles.iter().zip(&r.triangle_layer) {
            for &v in t {
                let rho = r.polar[v].0;
                let ok = match layer {
                    Layer::Scalp => rho >= rs - 1e-12,
                    Layer::Skull => rho >= rb - 1e-12 && rho <= rs + 1e-12,
                    Layer::Brain => rho <= rb + 1e-12,
                };
                assert!(ok, "{layer:?} triangle has node at ρ = {rho}");
            }
        }
    }

    #[test]
    fn electrode_endpoints_are_boundary_nodes() {
        let r = build_reference_mesh::<f64>(2, 16, 0.0833).unwrap();
        for (m, e) in r.electrodes.iter().enumerate() {
            let edges = r.electrode_edges(m);
            assert_eq!(edges.len(), e.segments);
            let (rho0, phi0) = r.polar[edges[0][0]];
            let (rho1, phi1) = r.polar[edges[e.segments - 1][1]];
            assert_eq!((rho0, rho1), (1.0, 1.0));
            assert!((phi0 - e.start()).abs() < 1e-12);
            assert!((phi1 - e.end()).abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_electrodes_are_rejected() {
        let err = build_reference_mesh::<f64>(0, 16, 0.2).unwrap_err();
        assert!(matches!(err, Error::OverlappingElectrodes(_)));
    }

    #[test]
    fn identity_deformation_scales_by_mean_radii() {
        let b = basis();
        let r = Arc::new(build_reference_mesh::<f64>(1, 16, 0.0833).unwrap());
        let mesh = deform_mesh(&r, &b, &[], &r.intended_electrode_angles(), ElectrodeSizing::Angular).unwrap();
        let (rs, rb) = (r.params.skull_radius, r.params.brain_radius);
        for (i, &(rho, phi)) in r.polar.iter().enumerate() {
            let m = b.mean.interpolate(phi);
            let expected = if rho > rs {
                m[1] + (rho - rs) / (1.0 - rs) * (m[0] - m[1])
            } else if rho > rb {
                m[2] + (rho - rb) / (rs - rb) * (m[1] - m[2])
            } else {
                rho / rb * m[2]
            };
            let p = mesh.nodes[i];
            assert!((p[0] - expected * phi.cos()).abs() < 1e-14, "node {i}");
            assert!((p[1] - expected * phi.sin()).abs() < 1e-14, "node {i}");
        }
        for m in 0..16 {
            assert_eq!(mesh.electrode_edges(m), r.electrode_edges(m));
        }
    }

    #[test]
    fn interface_nodes_lie_on_shape_curves() {
        let b = basis();
        let r = Arc::new(build_reference_mesh::<f64>(1, 16, 0.0833).unwrap());
        let alpha: Vec<f64> = b.coeff_var.iter().map(|v| 1.5 * v.sqrt()).collect();
        let angles: Vec<f64> = r.intended_electrode_angles().iter().enumerate().map(|(k, a)| a + 0.02 * (k as f64).sin()).collect();
        let mesh = deform_mesh(&r, &b, &alpha, &angles, ElectrodeSizing::Length(0.0075)).unwrap();
        for (ring, layer) in mesh.interface_rings().iter().zip([1usize, 2]) {
            for &v in ring {
                let p = mesh.nodes[v];
                let theta = p[1].atan2(p[0]);
                let r_expected = crate::shape::evaluate_shape(&b, &alpha, theta).unwrap()[layer];
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - r_expected).abs() < 1e-12);
            }
        }
        for m in 0..16 {
            assert!((mesh.electrode_length(m) - 0.015).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_distance_bounds() {
        let b = basis();
        let r = Arc::new(build_reference_mesh::<f64>(1, 16, 0.0833).unwrap());
        let mesh = deform_mesh(&r, &b, &[], &r.intended_electrode_angles(), ElectrodeSizing::Angular).unwrap();
        let d = boundary_distance(&mesh);
        let rmax = b.mean.layers[0].iter().fold(0.0f64, |a, &v| a.max(v));
        for &v in mesh.boundary_nodes() {
            assert_eq!(d[v], 0.0);
        }
        for &x in &d {
            assert!(x >= 0.0 && x <= rmax);
        }
        let center = mesh.n_nodes() - 1;
        let rmin = b.mean.layers[0].iter().fold(f64::INFINITY, |a, &v| a.min(v));
        let chord_tol = rmax * (1.0 - (PI / r.boundary_nodes.len() as f64 * 2.0).cos());
        assert!((d[center] - rmin).abs() <= chord_tol + 1e-4);
    }
}
