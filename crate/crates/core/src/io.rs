//! Artifact formats: raw little-endian matrices with JSON sidecars, the
//! error-model container, JSON records, residual traces, legacy VTK meshes
//! and PPM slice images. Every write goes through a temporary file in the
//! target directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aem::{ErrorModel, TrainingInfo};
use crate::config::TOOL_VERSION;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mesh::Mesh;
use crate::recon::{Reconstruction, StopReason, TraceEntry};
use crate::scalar::Real;

pub const MATRIX_FORMAT_VERSION: u32 = 1;
pub const AEM_FORMAT_VERSION: u32 = 1;
pub const RECON_FORMAT_VERSION: u32 = 1;

const AEM_MAGIC: &str = "stroke-eit-aem";

/// Writes `bytes` to `path` so that readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read(path)?;
    serde_json::from_slice(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn f64_le_bytes(values: &[f64], out: &mut Vec<u8>) {
    out.reserve(8 * values.len());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn f64_from_le(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

/// Sidecar describing a raw matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub endianness: String,
    pub order: String,
}

impl MatrixHeader {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            format_version: MATRIX_FORMAT_VERSION,
            rows,
            cols,
            dtype: "f64".into(),
            endianness: "little".into(),
            order: "row-major".into(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.format_version != MATRIX_FORMAT_VERSION
            || self.dtype != "f64"
            || self.endianness != "little"
            || self.order != "row-major"
        {
            return Err(Error::Format(format!("unsupported matrix layout {self:?}")));
        }
        Ok(())
    }
}

/// Path of the JSON sidecar of a raw matrix file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Raw row-major little-endian `f64` data at `path`, dimensions in `path.json`.
pub fn write_matrix(path: &Path, m: &DenseMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::new();
    f64_le_bytes(m.as_slice(), &mut bytes);
    write_json(&sidecar_path(path), &MatrixHeader::new(m.rows(), m.cols()))?;
    write_atomic(path, &bytes)
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix<f64>> {
    let header: MatrixHeader = read_json(&sidecar_path(path))?;
    header.check()?;
    let bytes = fs::read(path)?;
    let expected = header.rows.checked_mul(header.cols).and_then(|n| n.checked_mul(8));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "{}: {} bytes for a {}x{} f64 matrix",
            path.display(),
            bytes.len(),
            header.rows,
            header.cols
        )));
    }
    DenseMatrix::from_row_major(header.rows, header.cols, f64_from_le(&bytes))
}

/// Location of one binary block inside a container file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset from the start of the binary section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AemHeader {
    format: String,
    format_version: u32,
    tool_version: String,
    dim: usize,
    endianness: String,
    info: TrainingInfo,
    blocks: Vec<BlockInfo>,
}

/// One header line of JSON, then the mean and the row-major covariance as
/// little-endian `f64`.
pub fn encode_error_model(em: &ErrorModel) -> Result<Vec<u8>> {
    let dim = em.dim();
    if em.covariance.rows() != dim || em.covariance.cols() != dim {
        return Err(Error::DimensionMismatch("error-model covariance does not match its mean".into()));
    }
    let header = AemHeader {
        format: AEM_MAGIC.into(),
        format_version: AEM_FORMAT_VERSION,
        tool_version: TOOL_VERSION.into(),
        dim,
        endianness: "little".into(),
        info: em.info.clone(),
        blocks: vec![
            BlockInfo { name: "mean".into(), rows: dim, cols: 1, offset: 0 },
            BlockInfo { name: "covariance".into(), rows: dim, cols: dim, offset: 8 * dim },
        ],
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    f64_le_bytes(&em.mean, &mut out);
    f64_le_bytes(em.covariance.as_slice(), &mut out);
    Ok(out)
}

pub fn decode_error_model(bytes: &[u8]) -> Result<ErrorModel> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("missing error-model header".into()))?;
    let header: AemHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(format!("error-model header: {e}")))?;
    if header.format != AEM_MAGIC || header.format_version != AEM_FORMAT_VERSION || header.endianness != "little" {
        return Err(Error::Format(format!(
            "unsupported error-model file ({} v{}, {})",
            header.format, header.format_version, header.endianness
        )));
    }
    let body = &bytes[nl + 1..];
    let dim = header.dim;
    let block = |name: &str| -> Result<Vec<f64>> {
        let b = header
            .blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("error-model block {name} missing")))?;
        let len = 8 * b.rows * b.cols;
        let end = b.offset + len;
        if end > body.len() {
            return Err(Error::Format(format!("error-model block {name} truncated")));
        }
        Ok(f64_from_le(&body[b.offset..end]))
    };
    let mean = block("mean")?;
    let cov = block("covariance")?;
    if mean.len() != dim || cov.len() != dim * dim {
        return Err(Error::Format("error-model block sizes disagree with the header".into()));
    }
    Ok(ErrorModel { mean, covariance: DenseMatrix::from_row_major(dim, dim, cov)?, info: header.info })
}

pub fn write_error_model(path: &Path, em: &ErrorModel) -> Result<()> {
    write_atomic(path, &encode_error_model(em)?)
}

pub fn read_error_model(path: &Path) -> Result<ErrorModel> {
    decode_error_model(&fs::read(path)?)
}

/// Serialised reconstruction result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub format_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    pub measurement_seed: u64,
    pub used_aem: bool,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub z: Vec<f64>,
    pub residuals: Vec<f64>,
    pub discrepancy: f64,
    pub outer_iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceEntry>,
}

impl ReconstructionRecord {
    pub fn new(r: &Reconstruction<f64>, config_digest: String, measurement_seed: u64, used_aem: bool) -> Self {
        Self {
            format_version: RECON_FORMAT_VERSION,
            tool_version: TOOL_VERSION.into(),
            config_digest,
            measurement_seed,
            used_aem,
            kappa: r.kappa.clone(),
            sigma: r.sigma.clone(),
            z: r.z.clone(),
            residuals: r.residuals.clone(),
            discrepancy: r.discrepancy,
            outer_iterations: r.outer_iterations,
            stop: r.stop,
            trace: r.trace.clone(),
        }
    }
}

/// CSV with columns `outer_iter,inner_iter,lsqr_iters,E,min_kappa,max_kappa`.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("outer_iter,inner_iter,lsqr_iters,E,min_kappa,max_kappa\n");
    for e in trace {
        s += &format!(
            "{},{},{},{:e},{:e},{:e}\n",
            e.outer_iter, e.inner_iter, e.lsqr_iters, e.residual, e.min_kappa, e.max_kappa
        );
    }
    s
}

/// Measurement vector as CSV, one row per pattern, one column per electrode.
pub fn measurement_csv(data: &[f64], electrodes: usize) -> String {
    let mut s = (0..electrodes).map(|e| format!("u{}", e + 1)).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in data.chunks(electrodes) {
        s += &row.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",");
        s.push('\n');
    }
    s
}

/// Legacy ASCII VTK unstructured grid with nodal scalar fields and the
/// integer layer index per cell.
pub fn vtk_string<T: Real>(mesh: &Mesh<T>, point_fields: &[(&str, &[T])], title: &str) -> Result<String> {
    let n = mesh.n_nodes();
    for (name, f) in point_fields {
        if f.len() != n {
            return Err(Error::DimensionMismatch(format!("field {name} has {} values for {n} nodes", f.len())));
        }
    }
    let tris = mesh.triangles();
    let mut s = String::with_capacity(64 * n);
    s += "# vtk DataFile Version 3.0\n";
    s += &title.replace('\n', " ");
    s += "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    s += &format!("POINTS {n} double\n");
    for p in &mesh.nodes {
        s += &format!("{:e} {:e} 0\n", p[0].to_f64_lossy(), p[1].to_f64_lossy());
    }
    s += &format!("CELLS {} {}\n", tris.len(), 4 * tris.len());
    for t in tris {
        s += &format!("3 {} {} {}\n", t[0], t[1], t[2]);
    }
    s += &format!("CELL_TYPES {}\n", tris.len());
    for _ in tris {
        s += "5\n";
    }
    s += &format!("CELL_DATA {}\nSCALARS layer int 1\nLOOKUP_TABLE default\n", tris.len());
    for l in mesh.triangle_layer() {
        s += &format!("{}\n", l.index());
    }
    if !point_fields.is_empty() {
        s += &format!("POINT_DATA {n}\n");
        for (name, f) in point_fields {
            s += &format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n");
            for v in *f {
                s += &format!("{:e}\n", v.to_f64_lossy());
            }
        }
    }
    Ok(s)
}

pub fn write_vtk<T: Real>(path: &Path, mesh: &Mesh<T>, point_fields: &[(&str, &[T])], title: &str) -> Result<()> {
    write_atomic(path, vtk_string(mesh, point_fields, title)?.as_bytes())
}

/// Diverging colour map on `[-1, 1]`: blue, white at zero, red.
pub fn diverging_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(-t), fade(-t), 255]
    }
}

/// Piecewise-linear nodal field sampled on a `size x size` grid covering the
/// mesh bounding box, coloured symmetrically about zero (`scale` defaults
/// to the largest absolute value). Pixels outside the mesh are black.
pub fn ppm_slice<T: Real>(mesh: &Mesh<T>, field: &[T], size: usize, scale: Option<f64>) -> Result<Vec<u8>> {
    if field.len() != mesh.n_nodes() {
        return Err(Error::DimensionMismatch(format!("field has {} values for {} nodes", field.len(), mesh.n_nodes())));
    }
    if size < 2 {
        return Err(Error::InvalidArgument("image size must be at least 2".into()));
    }
    let pts: Vec<[f64; 2]> = mesh.nodes.iter().map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()]).collect();
    let vals: Vec<f64> = field.iter().map(|v| v.to_f64_lossy()).collect();
    let scale = scale.unwrap_or_else(|| vals.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let px = |i: usize| lo[0] + span * (i as f64 + 0.5) / size as f64;
    let py = |j: usize| hi[1] - span * (j as f64 + 0.5) / size as f64;

    // Bucket triangles by the pixels their bounding boxes cover.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); size * size];
    let to_px = |x: f64| (((x - lo[0]) / span * size as f64).floor().max(0.0) as usize).min(size - 1);
    let to_py = |y: f64| (((hi[1] - y) / span * size as f64).floor().max(0.0) as usize).min(size - 1);
    for (k, t) in mesh.triangles().iter().enumerate() {
        let xs = t.map(|v| pts[v][0]);
        let ys = t.map(|v| pts[v][1]);
        let (x0, x1) = (to_px(xs.iter().copied().fold(f64::INFINITY, f64::min)), to_px(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
        let (y0, y1) = (to_py(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)), to_py(ys.iter().copied().fold(f64::INFINITY, f64::min)));
        for j in y0..=y1 {
            for i in x0..=x1 {
                buckets[j * size + i].push(k);
            }
        }
    }

    let mut out = format!("P6\n{size} {size}\n255\n").into_bytes();
    for j in 0..size {
        for i in 0..size {
            let p = [px(i), py(j)];
            let mut rgb = [0u8; 3];
            for &k in &buckets[j * size + i] {
                let t = mesh.triangles()[k];
                if let Some(w) = barycentric(p, pts[t[0]], pts[t[1]], pts[t[2]]) {
                    let v = w[0] * vals[t[0]] + w[1] * vals[t[1]] + w[2] * vals[t[2]];
                    rgb = diverging_color(if scale > 0.0 { v / scale } else { 0.0 });
                    break;
                }
            }
            out.extend_from_slice(&rgb);
        }
    }
    Ok(out)
}

fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if det == 0.0 {
        return None;
    }
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    let l0 = 1.0 - l1 - l2;
    let tol = -1e-12;
    (l0 >= tol && l1 >= tol && l2 >= tol).then_some([l0, l1, l2])
}
