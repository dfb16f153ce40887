//! UAX artifact directories.
//!
//! ```text
//! <dir>/nu.f64           ν, raw little-endian f64, HWC order
//! <dir>/nu.json          sidecar: shape, budget, craft config, losses, file names
//! <dir>/seed.f64         x_A, raw little-endian f64, HWC order
//! <dir>/seed.png         x_A, 16-bit PNG (for viewing)
//! <dir>/x_prime.png      x′ = clamp(x_A + ν), 16-bit PNG
//! <dir>/loss_trace.csv   iteration,loss
//! ```
//!
//! Loading rebuilds `x′` from the exact `seed.f64` and `nu.f64` rather than
//! the quantized PNG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian as LE};
use serde::{Deserialize, Serialize};

use super::{apply_perturbation, AttackError, CraftConfig, Norm};
use crate::dataset::{save_png16, ImageTensor};

pub const NU_FORMAT: &str = "uax-nu";
const NU_VERSION: u32 = 1;

const NU_FILE: &str = "nu.f64";
const SIDECAR_FILE: &str = "nu.json";
const SEED_FILE: &str = "seed.f64";
const SEED_PNG: &str = "seed.png";
const X_PRIME_PNG: &str = "x_prime.png";
const TRACE_FILE: &str = "loss_trace.csv";

/// Seed image, perturbation, derived adversarial image and crafting log.
#[derive(Debug, Clone, PartialEq)]
pub struct UaxArtifact {
    seed_image: ImageTensor,
    seed_label: Option<String>,
    source_model: Option<String>,
    nu: Vec<f64>,
    adversarial_image: ImageTensor,
    config: CraftConfig,
    final_loss: f64,
    loss_trace: Vec<f64>,
}

impl UaxArtifact {
    /// Checks `ν` against the config's budget and derives `x′`.
    pub fn new(
        seed_image: ImageTensor,
        nu: Vec<f64>,
        config: CraftConfig,
        final_loss: f64,
        loss_trace: Vec<f64>,
    ) -> Result<Self, AttackError> {
        if let Some(i) = nu.iter().position(|v| !v.is_finite()) {
            return Err(AttackError::InvalidBudget(format!("perturbation element {i} is not finite")));
        }
        let norm = config.budget.norm().of(&nu);
        if norm > config.budget.xi() {
            return Err(AttackError::BudgetViolation {
                norm,
                xi: config.budget.xi(),
            });
        }
        let adversarial_image = apply_perturbation(&seed_image, &nu)?;
        Ok(Self {
            seed_image,
            seed_label: None,
            source_model: None,
            nu,
            adversarial_image,
            config,
            final_loss,
            loss_trace,
        })
    }

    /// Artifact with `ν = 0`, so `x′ = x_A`.
    pub fn unperturbed(seed_image: ImageTensor, config: CraftConfig) -> Self {
        let nu = vec![0.0; seed_image.pixels().len()];
        Self::new(seed_image, nu, config, f64::NAN, Vec::new()).expect("zero perturbation is feasible")
    }

    pub fn with_seed_label(mut self, label: impl Into<String>) -> Self {
        self.seed_label = Some(label.into());
        self
    }

    pub fn with_source_model(mut self, id: impl Into<String>) -> Self {
        self.source_model = Some(id.into());
        self
    }

    pub fn seed_image(&self) -> &ImageTensor {
        &self.seed_image
    }

    /// Identity the seed image was drawn from, when known.
    pub fn seed_label(&self) -> Option<&str> {
        self.seed_label.as_deref()
    }

    /// Identifier of the extractor the artifact was crafted against.
    pub fn source_model(&self) -> Option<&str> {
        self.source_model.as_deref()
    }

    /// `ν` in HWC order.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn adversarial_image(&self) -> &ImageTensor {
        &self.adversarial_image
    }

    pub fn config(&self) -> &CraftConfig {
        &self.config
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    shape: [usize; 3],
    dtype: String,
    layout: String,
    config: CraftConfig,
    linf_norm: f64,
    l2_norm: f64,
    final_loss: Option<f64>,
    seed_label: Option<String>,
    source_model: Option<String>,
    nu: String,
    seed: String,
    seed_png: String,
    adversarial_png: String,
    loss_trace: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AttackError + '_ {
    move |source| AttackError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> AttackError {
    AttackError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; values.len() * 8];
    LE::write_f64_into(values, &mut out);
    out
}

fn read_f64_file(path: &Path, expected: usize) -> Result<Vec<f64>, AttackError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(format_err(
            path,
            format!("expected {} bytes ({expected} f64), found {}", expected * 8, bytes.len()),
        ));
    }
    let mut out = vec![0.0; expected];
    LE::read_f64_into(&bytes, &mut out);
    Ok(out)
}

/// Writes the artifact into `dir` (created if needed) and returns the
/// written file paths.
pub fn save_artifact(artifact: &UaxArtifact, dir: &Path) -> Result<Vec<PathBuf>, AttackError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (h, w, c) = artifact.seed_image.dims();
    let sidecar = Sidecar {
        format: NU_FORMAT.into(),
        version: NU_VERSION,
        shape: [h, w, c],
        dtype: "float64-le".into(),
        layout: "hwc".into(),
        config: artifact.config.clone(),
        linf_norm: Norm::LInf.of(&artifact.nu),
        l2_norm: Norm::L2.of(&artifact.nu),
        final_loss: artifact.final_loss.is_finite().then_some(artifact.final_loss),
        seed_label: artifact.seed_label.clone(),
        source_model: artifact.source_model.clone(),
        nu: NU_FILE.into(),
        seed: SEED_FILE.into(),
        seed_png: SEED_PNG.into(),
        adversarial_png: X_PRIME_PNG.into(),
        loss_trace: TRACE_FILE.into(),
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    let mut trace = String::from("iteration,loss\n");
    for (i, l) in artifact.loss_trace.iter().enumerate() {
        writeln!(trace, "{i},{l}").expect("write to String");
    }

    let mut written = Vec::new();
    for (name, bytes) in [
        (NU_FILE, f64_bytes(&artifact.nu)),
        (SEED_FILE, f64_bytes(artifact.seed_image.pixels())),
        (SIDECAR_FILE, json.into_bytes()),
        (TRACE_FILE, trace.into_bytes()),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
    }
    for (name, img) in [(SEED_PNG, &artifact.seed_image), (X_PRIME_PNG, &artifact.adversarial_image)] {
        let path = dir.join(name);
        save_png16(img, &path)?;
        written.push(path);
    }
    written.sort();
    Ok(written)
}

/// Reads an artifact written by [`save_artifact`], re-checking the budget and
/// recomputing `x′`.
pub fn load_artifact(dir: &Path) -> Result<UaxArtifact, AttackError> {
    let sidecar_path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&sidecar_path).map_err(io_err(&sidecar_path))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| format_err(&sidecar_path, e.to_string()))?;
    if sidecar.format != NU_FORMAT || sidecar.version != NU_VERSION {
        return Err(format_err(
            &sidecar_path,
            format!("unsupported format {} v{}", sidecar.format, sidecar.version),
        ));
    }
    if sidecar.dtype != "float64-le" || sidecar.layout != "hwc" {
        return Err(format_err(
            &sidecar_path,
            format!("unsupported dtype/layout {}/{}", sidecar.dtype, sidecar.layout),
        ));
    }
    let [h, w, c] = sidecar.shape;
    let numel = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| format_err(&sidecar_path, "shape overflows"))?;
    let nu = read_f64_file(&dir.join(&sidecar.nu), numel)?;
    let seed_path = dir.join(&sidecar.seed);
    let seed_image = ImageTensor::new(h, w, c, read_f64_file(&seed_path, numel)?)
        .map_err(|e| format_err(&seed_path, e.to_string()))?;

    let trace_path = dir.join(&sidecar.loss_trace);
    let trace_text = fs::read_to_string(&trace_path).map_err(io_err(&trace_path))?;
    let mut loss_trace = Vec::new();
    for (n, line) in trace_text.lines().enumerate().skip(1) {
        let value = line
            .split_once(',')
            .and_then(|(_, v)| v.parse::<f64>().ok())
            .ok_or_else(|| format_err(&trace_path, format!("bad line {}: '{line}'", n + 1)))?;
        loss_trace.push(value);
    }

    let mut artifact = UaxArtifact::new(
        seed_image,
        nu,
        sidecar.config,
        sidecar.final_loss.unwrap_or(f64::NAN),
        loss_trace,
    )?;
    artifact.seed_label = sidecar.seed_label;
    artifact.source_model = sidecar.source_model;
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::PerturbationBudget;
    use crate::dataset::{load_png, Channels};

    fn artifact() -> UaxArtifact {
        let seed = ImageTensor::new(2, 3, 1, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let cfg = CraftConfig {
            budget: PerturbationBudget::linf(0.1).unwrap(),
            ..CraftConfig::default()
        };
        UaxArtifact::new(seed, vec![-0.1, 0.1, 0.05, -0.03, 0.1, 0.1], cfg, 1.25, vec![2.0, 1.5, 1.25])
            .unwrap()
            .with_seed_label("id0003")
            .with_source_model("tiny_cnn")
    }

    #[test]
    fn adversarial_image_is_clamped_sum() {
        let a = artifact();
        let expected = [0.0, 0.30000000000000004, 0.45, 0.57, 0.9, 1.0];
        for (p, e) in a.adversarial_image().pixels().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn over_budget_perturbation_is_rejected() {
        let seed = ImageTensor::filled(1, 2, 1, 0.5).unwrap();
        let cfg = CraftConfig {
            budget: PerturbationBudget::linf(0.1).unwrap(),
            ..CraftConfig::default()
        };
        assert!(matches!(
            UaxArtifact::new(seed, vec![0.0, 0.2], cfg, 0.0, vec![]),
            Err(AttackError::BudgetViolation { .. })
        ));
    }

    #[test]
    fn directory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = artifact();
        let files = save_artifact(&a, dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let b = load_artifact(dir.path()).unwrap();
        assert_eq!(a, b);
        let png = load_png(&dir.path().join(X_PRIME_PNG), Channels::Gray).unwrap();
        assert!(png.pixel_distance(a.adversarial_image()).unwrap() < 1e-4);
    }

    #[test]
    fn truncated_perturbation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_artifact(&artifact(), dir.path()).unwrap();
        fs::write(dir.path().join(NU_FILE), [0u8; 12]).unwrap();
        assert!(matches!(load_artifact(dir.path()), Err(AttackError::Format { .. })));
    }
}
