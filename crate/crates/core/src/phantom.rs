//! Target patients: random anatomies, tissue conductivities, contact
//! resistances and stroke inclusions, and simulated noisy measurements.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cem::CemModel;
use crate::error::{Error, Result};
use crate::mesh::{deform_mesh, ElectrodeSizing, Mesh, ReferenceMesh};
use crate::shape::{sample_shape_coeffs_scaled, Layer, ShapeBasis};

pub const SIGMA_MIN: f64 = 1e-5;
pub const SIGMA_MAX: f64 = 1e2;
pub const Z_MIN: f64 = 1e-6;
pub const Z_MAX: f64 = 10.0;
/// Physical electrode half-length (m); electrodes are 1.5 cm long.
pub const ELECTRODE_HALF_LENGTH: f64 = 0.0075;
/// Angular half-width of a 1.5 cm electrode on the 9 cm mean scalp.
pub const ELECTRODE_HALF_WIDTH: f64 = ELECTRODE_HALF_LENGTH / 0.09;

const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

/// Prior distributions of the nuisance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub sigma_scalp: Gaussian,
    pub sigma_skull: Gaussian,
    pub sigma_brain: Gaussian,
    /// i.i.d. per electrode.
    pub contact: Gaussian,
    /// Std of each electrode centre angle around its intended position (rad).
    pub electrode_angle_std: f64,
}

impl Default for Table1 {
    fn default() -> Self {
        Self {
            sigma_scalp: Gaussian::new(0.2, 0.02),
            sigma_skull: Gaussian::new(0.06, 0.006),
            sigma_brain: Gaussian::new(0.2, 0.02),
            contact: Gaussian::new(0.01, 0.0025),
            electrode_angle_std: 0.015,
        }
    }
}

impl Table1 {
    pub fn tissue_means(&self) -> [f64; 3] {
        [self.sigma_scalp.mean, self.sigma_skull.mean, self.sigma_brain.mean]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_scalp, self.sigma_skull, self.sigma_brain, self.contact];
        if all.iter().any(|g| !(g.std >= 0.0) || !(g.mean > 0.0)) || !(self.electrode_angle_std >= 0.0) {
            return Err(Error::InvalidArgument("distribution means must be positive and stds non-negative".into()));
        }
        Ok(())
    }
}

/// How far the target deviates from the surrogate head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Prior standard deviations halved.
    Moderate = 1,
    /// Prior standard deviations as tabulated.
    Severe = 2,
    /// Every parameter at its mean.
    Exact = 3,
}

impl Case {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Case::Moderate),
            2 => Ok(Case::Severe),
            3 => Ok(Case::Exact),
            _ => Err(Error::InvalidArgument(format!("case must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn std_scale(self) -> f64 {
        match self {
            Case::Moderate => 0.5,
            Case::Severe => 1.0,
            Case::Exact => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Patient {
    Healthy,
    Hemorrhagic,
    Ischemic,
}

impl Patient {
    pub fn stroke(self) -> Option<Stroke> {
        let conductivity = match self {
            Patient::Healthy => return None,
            Patient::Hemorrhagic => 2.0,
            Patient::Ischemic => 0.02,
        };
        Some(Stroke { center: [0.02, 0.03], radius: 0.0225, conductivity })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub center: [f64; 2],
    pub radius: f64,
    pub conductivity: f64,
}

/// One simulated patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub alpha: Vec<f64>,
    pub electrode_angles: Vec<f64>,
    pub z: Vec<f64>,
    /// Scalp, skull, brain conductivities (S/m).
    pub tissue: [f64; 3],
    pub stroke: Option<Stroke>,
    pub seed: u64,
}

fn draw_clamped<R: Rng + ?Sized>(g: Gaussian, scale: f64, lo: f64, hi: f64, what: &str, rng: &mut R) -> Result<f64> {
    for _ in 0..MAX_REJECTIONS {
        let z: f64 = StandardNormal.sample(rng);
        let v = g.mean + scale * g.std * z;
        if (lo..=hi).contains(&v) {
            return Ok(v);
        }
    }
    Err(Error::RetryCapExceeded { what: what.into(), attempts: MAX_REJECTIONS })
}

/// Draws every nuisance parameter with the prior stds multiplied by
/// `std_scale`. A zero scale returns the means without touching `rng`.
pub fn sample_nuisance<R: Rng + ?Sized>(
    table: &Table1,
    std_scale: f64,
    basis: &ShapeBasis<f64>,
    intended_angles: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, [f64; 3])> {
    table.validate()?;
    if std_scale == 0.0 {
        return Ok((
            vec![0.0; basis.dim()],
            intended_angles.to_vec(),
            vec![table.contact.mean; intended_angles.len()],
            table.tissue_means(),
        ));
    }
    let alpha = sample_shape_coeffs_scaled(basis, std_scale, rng)?;
    let angle_noise = Normal::new(0.0, std_scale * table.electrode_angle_std)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let angles = intended_angles.iter().map(|&a| a + angle_noise.sample(rng)).collect();
    let z = (0..intended_angles.len())
        .map(|_| draw_clamped(table.contact, std_scale, Z_MIN, Z_MAX, "contact resistance", rng))
        .collect::<Result<_>>()?;
    let mut tissue = [0.0; 3];
    for (t, g) in tissue.iter_mut().zip([table.sigma_scalp, table.sigma_skull, table.sigma_brain]) {
        *t = draw_clamped(g, std_scale, SIGMA_MIN, SIGMA_MAX, "tissue conductivity", rng)?;
    }
    Ok((alpha, angles, z, tissue))
}

/// Samples a target patient for one of the three cases. The same `seed`
/// always gives the same target.
pub fn sample_target(
    case: Case,
    patient: Patient,
    table: &Table1,
    basis: &ShapeBasis<f64>,
    intended_angles: &[f64],
    seed: u64,
) -> Result<TargetSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (alpha, electrode_angles, z, tissue) =
        sample_nuisance(table, case.std_scale(), basis, intended_angles, &mut rng)?;
    Ok(TargetSpec { alpha, electrode_angles, z, tissue, stroke: patient.stroke(), seed })
}

/// Physical mesh of a target on a given reference triangulation.
pub fn target_mesh(reference: &Arc<ReferenceMesh<f64>>, basis: &ShapeBasis<f64>, target: &TargetSpec) -> Result<Mesh<f64>> {
    deform_mesh(reference, basis, &target.alpha, &target.electrode_angles, ElectrodeSizing::Length(ELECTRODE_HALF_LENGTH))
}

fn inside_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Nodal conductivity: layer value by node layer (interface nodes take the
/// inner layer), stroke value on brain nodes inside the stroke disk.
pub fn rasterize_conductivity(mesh: &Mesh<f64>, tissue: [f64; 3], stroke: Option<&Stroke>) -> Result<Vec<f64>> {
    let mut sigma: Vec<f64> = mesh.node_layer().iter().map(|l| tissue[l.index()]).collect();
    if let Some(s) = stroke {
        let brain: Vec<[f64; 2]> = mesh.interface_rings()[1].iter().map(|&v| mesh.nodes[v]).collect();
        if !inside_polygon(s.center, &brain) {
            return Err(Error::StrokeOutsideBrain(format!("centre {:?} m", s.center)));
        }
        for (i, p) in mesh.nodes.iter().enumerate() {
            let d = ((p[0] - s.center[0]).powi(2) + (p[1] - s.center[1]).powi(2)).sqrt();
            if mesh.node_layer()[i] == Layer::Brain && d <= s.radius {
                sigma[i] = s.conductivity;
            }
        }
    }
    Ok(sigma)
}

/// Diagonal measurement noise with std `level · (max 𝒰 − min 𝒰)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub level: f64,
    pub std: f64,
}

impl NoiseModel {
    pub fn from_data(level: f64, data: &[f64]) -> Self {
        let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = if data.is_empty() { 0.0 } else { hi - lo };
        Self { level, std: level * range }
    }

    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        if self.std == 0.0 {
            return vec![0.0; len];
        }
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.std * z
            })
            .collect()
    }
}

/// Stacked noisy measurements with enough metadata to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub format_version: u32,
    pub electrodes: usize,
    /// Zero-based index of the common current electrode.
    pub feed: usize,
    pub data: Vec<f64>,
    pub noise: NoiseModel,
    pub seed: u64,
    pub sim_refinement: u32,
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub config_digest: String,
}

pub const MEASUREMENT_FORMAT_VERSION: u32 = 1;

/// Noise seed stream, kept separate from the target-sampling stream.
const NOISE_STREAM: u64 = 1;

/// Forward-simulates `target` on the fine reference mesh and adds noise.
pub fn simulate_measurement(
    target: &TargetSpec,
    basis: &ShapeBasis<f64>,
    sim_reference: &Arc<ReferenceMesh<f64>>,
    recon_refinement: u32,
    feed: usize,
    noise_level: f64,
) -> Result<MeasurementRecord> {
    let sim = sim_reference.params.refinement;
    if sim <= recon_refinement {
        return Err(Error::InverseCrime { sim, recon: recon_refinement });
    }
    if !(noise_level >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {noise_level} must be non-negative")));
    }
    let mesh = Arc::new(target_mesh(sim_reference, basis, target)?);
    let sigma = rasterize_conductivity(&mesh, target.tissue, target.stroke.as_ref())?;
    let model = CemModel::new(Arc::clone(&mesh), feed)?;
    let clean = model.solve_forward(&sigma, &target.z)?;
    let noise = NoiseModel::from_data(noise_level, &clean);
    let mut rng = ChaCha8Rng::seed_from_u64(target.seed);
    rng.set_stream(NOISE_STREAM);
    let e = noise.sample(clean.len(), &mut rng);
    let data = clean.iter().zip(&e).map(|(u, e)| u + e).collect();
    Ok(MeasurementRecord {
        format_version: MEASUREMENT_FORMAT_VERSION,
        electrodes: model.n_electrodes(),
        feed,
        data,
        noise,
        seed: target.seed,
        sim_refinement: sim,
        target: Some(target.clone()),
        config_digest: String::new(),
    })
}
