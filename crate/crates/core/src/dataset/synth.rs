//! Procedural identities.
//!
//! Each identity owns a latent prototype `z` of `prototype_dim` values in
//! `[0, 1)`, read six at a time. Every group describes one family of
//! oriented Gaussian blobs (scale, aspect, heading, magnitude, polarity,
//! orientation spread); the identity scatters `blobs_per_family` members of
//! each family over the canvas at positions fixed once per identity. A face
//! image is the smooth rendering of all blobs over a flat background,
//! observed through per-image nuisances: a random deformation of every blob,
//! an integer translation, a global brightness offset and i.i.d. Gaussian
//! pixel noise, then clamped to `[0, 1]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetRole, IdentityDataset, ImageTensor};

/// Latent values per blob family.
pub const FAMILY_PARAMS: usize = 6;
const BACKGROUND: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub identity_count: usize,
    pub images_per_identity: usize,
    /// Side length of the square images.
    pub image_size: usize,
    pub channels: usize,
    /// Latent code length; a positive multiple of [`FAMILY_PARAMS`].
    pub prototype_dim: usize,
    pub blobs_per_family: usize,
    /// Maximum absolute translation in pixels along each axis.
    pub shift_px: usize,
    /// Maximum absolute brightness offset.
    pub brightness_delta: f64,
    pub noise_sigma: f64,
    /// Relative per-image deformation of every blob (see `Blob::deformed`).
    pub blob_jitter: f64,
    pub rng_seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            identity_count: 150,
            images_per_identity: 5,
            image_size: 112,
            channels: 1,
            prototype_dim: 72,
            blobs_per_family: 4,
            shift_px: 3,
            brightness_delta: 0.05,
            noise_sigma: 0.02,
            blob_jitter: 0.1,
            rng_seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |msg: String| Err(DatasetError::InvalidParams(msg));
        if self.identity_count == 0 || self.images_per_identity == 0 {
            return fail("identity and image counts must be positive".into());
        }
        if self.image_size < 8 {
            return fail(format!("image size {} is below the 8 pixel minimum", self.image_size));
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.prototype_dim == 0 || self.prototype_dim % FAMILY_PARAMS != 0 {
            return fail(format!(
                "prototype_dim must be a positive multiple of {FAMILY_PARAMS}, got {}",
                self.prototype_dim
            ));
        }
        if self.blobs_per_family == 0 {
            return fail("blobs_per_family must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma must be finite and non-negative, got {}", self.noise_sigma));
        }
        if !(self.blob_jitter >= 0.0 && self.blob_jitter.is_finite()) {
            return fail(format!("blob jitter must be finite and non-negative, got {}", self.blob_jitter));
        }
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return fail(format!("brightness delta must be finite and non-negative, got {}", self.brightness_delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Blob {
    cx: f64,
    cy: f64,
    major: f64,
    minor: f64,
    angle: f64,
    amplitude: f64,
}

impl Blob {
    /// Per-image deformation: centers move by `N(0, (j · major)²)`, scales
    /// and magnitude are multiplied by `exp(N(0, j²))`, the angle turns by
    /// `N(0, j²)` radians.
    fn deformed(&self, jitter: f64, rng: &mut ChaCha8Rng) -> Blob {
        let mut n = || rng.sample::<f64, _>(StandardNormal) * jitter;
        Blob {
            cx: self.cx + n() * self.major,
            cy: self.cy + n() * self.major,
            major: self.major * n().exp(),
            minor: self.minor * n().exp(),
            angle: self.angle + n(),
            amplitude: self.amplitude * n().exp(),
        }
    }
}

#[derive(Debug, Clone)]
struct Prototype {
    blobs: Vec<Blob>,
    channel_gain: Vec<f64>,
}

impl Prototype {
    /// Members of a family differ from its code by up to ±15% in size and
    /// magnitude and by the family's orientation spread in angle.
    fn from_code(code: &[f64], per_family: usize, size: usize, channel_gain: Vec<f64>, rng: &mut ChaCha8Rng) -> Self {
        let s = size as f64;
        let mut blobs = Vec::with_capacity(code.len() / FAMILY_PARAMS * per_family);
        for z in code.chunks_exact(FAMILY_PARAMS) {
            let scale = (0.02 + 0.06 * z[0]) * s;
            let aspect = 0.2 + 0.8 * z[1];
            let heading = PI * z[2];
            let magnitude = 0.15 + 0.25 * z[3];
            let polarity = if z[4] < 0.5 { -1.0 } else { 1.0 };
            let spread = 0.5 * PI * z[5];
            for _ in 0..per_family {
                let major = scale * rng.gen_range(0.85..1.15);
                blobs.push(Blob {
                    cx: rng.gen_range(0.1..0.9) * s,
                    cy: rng.gen_range(0.1..0.9) * s,
                    major,
                    minor: major * aspect,
                    angle: heading + spread * (rng.gen::<f64>() - 0.5),
                    amplitude: polarity * magnitude * rng.gen_range(0.85..1.15),
                });
            }
        }
        Self { blobs, channel_gain }
    }
}

/// Blob in the form evaluated per pixel.
struct Kernel {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    amplitude: f64,
}

fn kernels(blobs: &[Blob]) -> Vec<Kernel> {
    blobs
        .iter()
        .map(|bl| Kernel {
            cx: bl.cx,
            cy: bl.cy,
            a: 1.0 / (2.0 * bl.major * bl.major),
            b: 1.0 / (2.0 * bl.minor * bl.minor),
            cos: bl.angle.cos(),
            sin: bl.angle.sin(),
            amplitude: bl.amplitude,
        })
        .collect()
}

fn intensity(kernels: &[Kernel], x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    for k in kernels {
        let (dx, dy) = (x - k.cx, y - k.cy);
        let u = dx * k.cos + dy * k.sin;
        let w = -dx * k.sin + dy * k.cos;
        v += k.amplitude * (-(u * u * k.a + w * w * k.b)).exp();
    }
    v
}

/// Deterministic synthetic identity gallery.
pub fn generate_synthetic(params: &SynthParams) -> Result<IdentityDataset, DatasetError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let size = params.image_size;
    let prototypes: Vec<Prototype> = (0..params.identity_count)
        .map(|_| {
            let code: Vec<f64> = (0..params.prototype_dim).map(|_| rng.gen::<f64>()).collect();
            let gain = if params.channels == 1 {
                vec![1.0]
            } else {
                (0..params.channels).map(|_| rng.gen_range(0.7..1.3)).collect()
            };
            Prototype::from_code(&code, params.blobs_per_family, size, gain, &mut rng)
        })
        .collect();

    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| DatasetError::InvalidParams(e.to_string()))?;
    let shift = params.shift_px as i64;
    let mut entries = BTreeMap::new();
    for (id, proto) in prototypes.iter().enumerate() {
        let mut images = Vec::with_capacity(params.images_per_identity);
        for _ in 0..params.images_per_identity {
            let dx = rng.gen_range(-shift..=shift) as f64;
            let dy = rng.gen_range(-shift..=shift) as f64;
            let brightness = if params.brightness_delta > 0.0 {
                rng.gen_range(-params.brightness_delta..=params.brightness_delta)
            } else {
                0.0
            };
            let blobs: Vec<Blob> = if params.blob_jitter > 0.0 {
                proto.blobs.iter().map(|b| b.deformed(params.blob_jitter, &mut rng)).collect()
            } else {
                proto.blobs.clone()
            };
            let kernels = kernels(&blobs);
            let mut pixels = Vec::with_capacity(size * size * params.channels);
            for y in 0..size {
                for x in 0..size {
                    let base = intensity(&kernels, x as f64 + 0.5 - dx, y as f64 + 0.5 - dy);
                    for &gain in &proto.channel_gain {
                        let n = if params.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        pixels.push(BACKGROUND + gain * base + brightness + n);
                    }
                }
            }
            images.push(ImageTensor::from_clamped(size, size, params.channels, pixels)?);
        }
        entries.insert(format!("id{id:04}"), images);
    }
    IdentityDataset::new(DatasetRole::All, entries)
}
