//! C ABI over `uax-core`.
//!
//! Every fallible function returns a [`UaxStatus`]; on failure the message
//! is available from [`uax_last_error`] on the same thread until the next
//! call. Handles are opaque and must be released with their `_free`
//! function. Images are `height × width × channels` doubles in `[0, 1]`,
//! channel-last.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use uax_core::attack::{self, AttackError, CraftConfig, Norm, PerturbationBudget};
use uax_core::dataset::{self, Channels, DatasetError, ImageTensor};
use uax_core::extractor::{self, Embedder, ModelError};
use uax_core::metrics::{self, MetricsError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UaxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UaxNorm {
    LInf = 0,
    L2 = 1,
}

impl From<UaxNorm> for Norm {
    fn from(n: UaxNorm) -> Self {
        match n {
            UaxNorm::LInf => Norm::LInf,
            UaxNorm::L2 => Norm::L2,
        }
    }
}

/// Crafting settings; start from [`uax_craft_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UaxCraftParams {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Budget radius in `[0, 1]` pixel units.
    pub xi: f64,
    pub norm: UaxNorm,
    pub rng_seed: u64,
}

/// Equal-error operating point; a score `≤ threshold` is a match.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UaxEer {
    pub eer: f64,
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// Trained embedding network.
pub struct UaxModel(extractor::ExtractorModel);

/// Identity gallery loaded from `<dir>/<label>/*.png`.
pub struct UaxGallery(dataset::IdentityDataset);

/// Crafted perturbation with its seed and adversarial image.
pub struct UaxArtifact(attack::UaxArtifact);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(UaxStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(UaxStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure(UaxStatus::InvalidArgument, message.into())
    }
}

fn dataset_status(e: &DatasetError) -> UaxStatus {
    match e {
        DatasetError::Io { .. } => UaxStatus::Io,
        DatasetError::Decode { .. } => UaxStatus::Format,
        DatasetError::InconsistentShape { .. } | DatasetError::TooSmall { .. } => UaxStatus::Shape,
        _ => UaxStatus::InvalidArgument,
    }
}

fn model_status(e: &ModelError) -> UaxStatus {
    match e {
        ModelError::Io { .. } => UaxStatus::Io,
        ModelError::BadMagic(_) | ModelError::UnsupportedVersion(_) | ModelError::Truncated | ModelError::Corrupt(_) => {
            UaxStatus::Format
        }
        ModelError::InputShape { .. } => UaxStatus::Shape,
        ModelError::Numerics(_) | ModelError::Diverged { .. } => UaxStatus::Numeric,
        ModelError::Dataset(d) => dataset_status(d),
        _ => UaxStatus::InvalidArgument,
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure(dataset_status(&e), e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(model_status(&e), e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let status = match &e {
            MetricsError::Model(m) => model_status(m),
            _ => UaxStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        let status = match &e {
            AttackError::Io { .. } => UaxStatus::Io,
            AttackError::Format { .. } => UaxStatus::Format,
            AttackError::ShapeMismatch { .. } => UaxStatus::Shape,
            AttackError::NonFinite { .. } | AttackError::Numerics(_) => UaxStatus::Numeric,
            AttackError::Model(m) => model_status(m),
            AttackError::Dataset(d) => dataset_status(d),
            _ => UaxStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

/// Runs `body`, converting failures and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> UaxStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => UaxStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {message}"));
            UaxStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(Failure::null("path"));
    }
    let text = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure::invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(text))
}

unsafe fn slice_arg<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if data.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn out_slice<'a>(data: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if data.is_null() {
        return Err(Failure::null(what));
    }
    if len != needed {
        return Err(Failure(
            UaxStatus::Shape,
            format!("{what} holds {len} values, {needed} are needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::null(what))
}

fn image_for(model: &UaxModel, pixels: &[f64]) -> Result<ImageTensor, Failure> {
    let (h, w, c) = model.0.input_dims();
    if pixels.len() != h * w * c {
        return Err(Failure(
            UaxStatus::Shape,
            format!("image has {} values, the model expects {h}×{w}×{c}", pixels.len()),
        ));
    }
    Ok(ImageTensor::new(h, w, c, pixels.to_vec())?)
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn uax_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uax_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn uax_model_load(path: *const c_char, out: *mut *mut UaxModel) -> UaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = ptr::null_mut();
        let model = extractor::load_model(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(UaxModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`uax_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uax_model_free(model: *mut UaxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn uax_model_input_dims(
    model: *const UaxModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> UaxStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if height.is_null() || width.is_null() || channels.is_null() {
            return Err(Failure::null("dimension output"));
        }
        let (h, w, c) = m.0.input_dims();
        (*height, *width, *channels) = (h, w, c);
        Ok(())
    })
}

/// Embedding length of `model`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uax_model_embedding_dim(model: *const UaxModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.embedding_dim())
}

/// Writes the embedding of one image to `out` (`out_len` must equal the
/// embedding length).
///
/// # Safety
/// `pixels` must hold `len` doubles and `out` `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uax_embed(
    model: *const UaxModel,
    pixels: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> UaxStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let image = image_for(m, slice_arg(pixels, len, "pixels")?)?;
        let out = out_slice(out, out_len, m.0.embedding_dim(), "embedding output")?;
        out.copy_from_slice(&m.0.embed(&image)?);
        Ok(())
    })
}

/// Loads `<dir>/<label>/*.png`, preprocessing every image to
/// `size × size` with `channels` (1 or 3) channels.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn uax_gallery_load(
    dir: *const c_char,
    channels: usize,
    size: usize,
    out: *mut *mut UaxGallery,
) -> UaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = ptr::null_mut();
        let channels =
            Channels::from_count(channels).ok_or_else(|| Failure::invalid(format!("unsupported channel count {channels}")))?;
        let (data, _) = dataset::load_directory(&path_arg(dir)?, channels, size)?;
        *out = Box::into_raw(Box::new(UaxGallery(data.with_role(dataset::DatasetRole::Train))));
        Ok(())
    })
}

/// # Safety
/// `gallery` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uax_gallery_identity_count(gallery: *const UaxGallery) -> usize {
    gallery.as_ref().map_or(0, |g| g.0.identity_count())
}

/// # Safety
/// `gallery` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uax_gallery_image_count(gallery: *const UaxGallery) -> usize {
    gallery.as_ref().map_or(0, |g| g.0.image_count())
}

/// # Safety
/// `gallery` must come from [`uax_gallery_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uax_gallery_free(gallery: *mut UaxGallery) {
    if !gallery.is_null() {
        drop(Box::from_raw(gallery));
    }
}

/// Defaults: 500 iterations, batch 32, learning rate 0.01, ξ = 10/255 under
/// ℓ∞, seed 0.
#[no_mangle]
pub extern "C" fn uax_craft_params_default() -> UaxCraftParams {
    let d = CraftConfig::default();
    UaxCraftParams {
        iterations: d.iterations,
        batch_size: d.batch_size,
        learning_rate: d.learning_rate,
        xi: d.budget.xi(),
        norm: UaxNorm::LInf,
        rng_seed: d.rng_seed,
    }
}

/// Crafts a UAX from `seed_pixels` against `model`, drawing batches from
/// `train`.
///
/// # Safety
/// Handles must be live, `seed_pixels` must hold `len` doubles, `params`
/// must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn uax_craft(
    model: *const UaxModel,
    train: *const UaxGallery,
    seed_pixels: *const f64,
    len: usize,
    params: *const UaxCraftParams,
    out: *mut *mut UaxArtifact,
) -> UaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = ptr::null_mut();
        let m = handle(model, "model")?;
        let g = handle(train, "train gallery")?;
        let p = handle(params, "params")?;
        let seed = image_for(m, slice_arg(seed_pixels, len, "seed pixels")?)?;
        let cfg = CraftConfig {
            iterations: p.iterations,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            rng_seed: p.rng_seed,
            budget: PerturbationBudget::new(p.norm.into(), p.xi)?,
            ..CraftConfig::default()
        };
        let artifact = attack::craft_uax(&m.0, &seed, &g.0, &cfg)?.with_source_model(m.0.spec().arch.id());
        *out = Box::into_raw(Box::new(UaxArtifact(artifact)));
        Ok(())
    })
}

/// Number of doubles in the artifact's perturbation (and images).
///
/// # Safety
/// `artifact` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_len(artifact: *const UaxArtifact) -> usize {
    artifact.as_ref().map_or(0, |a| a.0.nu().len())
}

/// Copies ν into `out`.
///
/// # Safety
/// `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_perturbation(artifact: *const UaxArtifact, out: *mut f64, len: usize) -> UaxStatus {
    guard(|| {
        let a = handle(artifact, "artifact")?;
        out_slice(out, len, a.0.nu().len(), "perturbation output")?.copy_from_slice(a.0.nu());
        Ok(())
    })
}

/// Copies `x′ = clamp(x_A + ν)` into `out`.
///
/// # Safety
/// `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_adversarial(artifact: *const UaxArtifact, out: *mut f64, len: usize) -> UaxStatus {
    guard(|| {
        let a = handle(artifact, "artifact")?;
        let pixels = a.0.adversarial_image().pixels();
        out_slice(out, len, pixels.len(), "image output")?.copy_from_slice(pixels);
        Ok(())
    })
}

/// Mean distance from `x′` to the whole training pool after crafting.
///
/// # Safety
/// `artifact` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_final_loss(artifact: *const UaxArtifact) -> f64 {
    artifact.as_ref().map_or(f64::NAN, |a| a.0.final_loss())
}

/// Writes the artifact directory (`nu.f64`, `nu.json`, PNG previews, loss
/// trace).
///
/// # Safety
/// `artifact` must be live and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_save(artifact: *const UaxArtifact, dir: *const c_char) -> UaxStatus {
    guard(|| {
        let a = handle(artifact, "artifact")?;
        attack::save_artifact(&a.0, &path_arg(dir)?)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_load(dir: *const c_char, out: *mut *mut UaxArtifact) -> UaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = ptr::null_mut();
        let artifact = attack::load_artifact(&path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(UaxArtifact(artifact)));
        Ok(())
    })
}

/// # Safety
/// `artifact` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uax_artifact_free(artifact: *mut UaxArtifact) {
    if !artifact.is_null() {
        drop(Box::from_raw(artifact));
    }
}

/// Projects `nu` onto the closed ball of radius `xi` in place.
///
/// # Safety
/// `nu` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uax_project(nu: *mut f64, len: usize, xi: f64, norm: UaxNorm) -> UaxStatus {
    guard(|| {
        let budget = PerturbationBudget::new(norm.into(), xi)?;
        let values = out_slice(nu, len, len, "nu")?;
        let projected = attack::project(values, &budget);
        values.copy_from_slice(&projected);
        Ok(())
    })
}

/// Equal-error point of genuine and imposter distances.
///
/// # Safety
/// The score arrays must hold `genuine_len` and `imposter_len` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uax_eer(
    genuine: *const f64,
    genuine_len: usize,
    imposter: *const f64,
    imposter_len: usize,
    out: *mut UaxEer,
) -> UaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let scores = metrics::ScoreSet::new(
            slice_arg(genuine, genuine_len, "genuine")?.to_vec(),
            slice_arg(imposter, imposter_len, "imposter")?.to_vec(),
            metrics::Metric::Euclidean,
        )?;
        let p = metrics::compute_eer(&scores)?;
        *out = UaxEer {
            eer: p.eer,
            threshold: p.threshold,
            fmr: p.fmr,
            fnmr: p.fnmr,
        };
        Ok(())
    })
}
