//! Pipeline configuration, its provenance digest, and the objects every
//! stage derives from it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aem::TrainingSetup;
use crate::cem::CemModel;
use crate::error::{Error, Result};
use crate::mesh::{build_reference_mesh, deform_mesh, ElectrodeSizing, Mesh, ReferenceMesh};
use crate::phantom::{rasterize_conductivity, Case, Patient, Table1, ELECTRODE_HALF_LENGTH, ELECTRODE_HALF_WIDTH};
use crate::recon::ReconOptions;
use crate::shape::{build_library_with, compute_pca, LibraryGenerator, ShapeBasis};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Version string embedded in every artifact.
pub const TOOL_VERSION: &str = concat!("stroke-eit ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    pub size: usize,
    pub grid: usize,
    pub seed: u64,
    /// Retained principal components.
    pub components: usize,
    pub generator: LibraryGenerator,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self { size: 50, grid: 128, seed: 1, components: 10, generator: LibraryGenerator::default() }
    }
}

/// Everything that determines the forward models. The config digest is
/// computed from this section only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub electrodes: usize,
    /// One-based index of the common current electrode.
    pub feed: usize,
    pub sim_refinement: u32,
    pub recon_refinement: u32,
    pub library: LibraryConfig,
    pub table: Table1,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            electrodes: 16,
            feed: 1,
            sim_refinement: 3,
            recon_refinement: 2,
            library: LibraryConfig::default(),
            table: Table1::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// 1, 2 or 3.
    pub case: u8,
    pub patient: Patient,
    pub seed: u64,
    /// Noise std as a fraction of the data range.
    pub noise_level: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { case: 2, patient: Patient::Hemorrhagic, seed: 7, noise_level: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AemConfig {
    pub samples: usize,
    pub seed: u64,
    /// Multiplier on every prior std during training.
    pub std_scale: f64,
}

impl Default for AemConfig {
    fn default() -> Self {
        Self { samples: 1000, seed: 11, std_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub model: ModelConfig,
    pub simulation: SimulationConfig,
    pub aem: AemConfig,
    pub recon: ReconOptions,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self { format_version: CONFIG_FORMAT_VERSION, ..Default::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        if cfg.format_version == 0 {
            cfg.format_version = CONFIG_FORMAT_VERSION;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return bad(format!("unsupported config format version {}", self.format_version));
        }
        let m = &self.model;
        if m.electrodes < 2 {
            return bad(format!("need at least 2 electrodes, got {}", m.electrodes));
        }
        if m.feed == 0 || m.feed > m.electrodes {
            return bad(format!("feed electrode {} outside 1..={}", m.feed, m.electrodes));
        }
        if m.sim_refinement <= m.recon_refinement {
            return Err(Error::InverseCrime { sim: m.sim_refinement, recon: m.recon_refinement });
        }
        if m.library.components == 0 || m.library.components >= m.library.size {
            return bad(format!(
                "principal components {} must lie in 1..{}",
                m.library.components, m.library.size
            ));
        }
        m.table.validate()?;
        Case::from_number(self.simulation.case)?;
        if !(self.simulation.noise_level >= 0.0) {
            return bad("noise level must be non-negative".into());
        }
        if self.aem.samples < 2 {
            return bad(format!("AEM needs at least 2 samples, got {}", self.aem.samples));
        }
        if !(self.aem.std_scale >= 0.0) {
            return bad("AEM std scale must be non-negative".into());
        }
        self.recon.validate()
    }

    /// Hex SHA-256 of the canonical JSON of the model section.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.model).expect("config serialises");
        sha256_hex(&bytes)
    }

    pub fn case(&self) -> Case {
        Case::from_number(self.simulation.case).expect("validated case")
    }

    /// Zero-based feed index used by the library.
    pub fn feed_index(&self) -> usize {
        self.model.feed - 1
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shape basis, reference meshes and the surrogate model of a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub basis: Arc<ShapeBasis<f64>>,
    pub sim_reference: Arc<ReferenceMesh<f64>>,
    pub recon_reference: Arc<ReferenceMesh<f64>>,
    /// Mean geometry, intended electrodes, on the reconstruction mesh.
    pub surrogate: CemModel<f64>,
    /// Literature tissue conductivities on the surrogate mesh.
    pub sigma0: Vec<f64>,
}

impl Setup {
    pub fn new(model: &ModelConfig) -> Result<Self> {
        let lib = &model.library;
        let library = build_library_with::<f64>(&lib.generator, lib.size, lib.grid, lib.seed)?;
        let basis = Arc::new(compute_pca(&library, lib.components)?);
        let m = model.electrodes;
        let sim_reference = Arc::new(build_reference_mesh(model.sim_refinement, m, ELECTRODE_HALF_WIDTH)?);
        let recon_reference = Arc::new(build_reference_mesh(model.recon_refinement, m, ELECTRODE_HALF_WIDTH)?);
        let mesh = Arc::new(surrogate_mesh(&recon_reference, &basis)?);
        let sigma0 = rasterize_conductivity(&mesh, model.table.tissue_means(), None)?;
        let surrogate = CemModel::new(mesh, model.feed - 1)?;
        Ok(Self { basis, sim_reference, recon_reference, surrogate, sigma0 })
    }

    pub fn intended_angles(&self) -> Vec<f64> {
        self.recon_reference.intended_electrode_angles()
    }

    /// Training inputs on the simulation-level mesh.
    pub fn training(&self, model: &ModelConfig, std_scale: f64) -> TrainingSetup {
        TrainingSetup {
            basis: Arc::clone(&self.basis),
            reference: Arc::clone(&self.sim_reference),
            table: model.table,
            std_scale,
            feed: model.feed - 1,
        }
    }
}

/// Mean head with electrodes at their intended positions.
pub fn surrogate_mesh(reference: &Arc<ReferenceMesh<f64>>, basis: &ShapeBasis<f64>) -> Result<Mesh<f64>> {
    let angles = reference.intended_electrode_angles();
    deform_mesh(reference, basis, &[], &angles, ElectrodeSizing::Length(ELECTRODE_HALF_LENGTH))
}
