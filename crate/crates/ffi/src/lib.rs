//! C interface to `treebp` models.
//!
//! Models are opaque handles created by a `treebp_model_*` constructor and
//! released with [`treebp_model_free`]. Every fallible call returns a
//! [`TreebpStatus`]; the message of the most recent failure on the calling
//! thread is available from [`treebp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use treebp::grad::{example_gradients, Engine};
use treebp::models::{count_gradient_instances, count_routes, Arch, Geometry, InitScheme, LeNet5Config, Model, ModelSpec, Tree3Config, TreeLayout};
use treebp::tensor::softmax_xent;
use treebp::train::{load_checkpoint, save_checkpoint};
use treebp::{Activation, Error, Tensor};

/// Result of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreebpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    ConfigMismatch = 6,
    Unsupported = 7,
    NonFinite = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreebpActivation {
    Relu = 0,
    Sigmoid = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreebpGeometry {
    Cifar = 0,
    Mnist = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreebpArch {
    Lenet5 = 0,
    Tree3 = 1,
}

/// Opaque model handle.
pub struct TreebpModel {
    model: Model<f32>,
}

/// Outcome of one per-example backward pass.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TreebpGradientStats {
    pub loss: f32,
    /// Zero-gradient fractions of the conv, tree and fc stages.
    pub zero_fraction: [f64; 3],
    pub nonzero_entries: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TreebpStatus {
    match e {
        Error::Shape { .. } | Error::InvalidShape { .. } => TreebpStatus::ShapeMismatch,
        Error::Checkpoint(_) => TreebpStatus::Checkpoint,
        Error::ConfigMismatch(_) => TreebpStatus::ConfigMismatch,
        Error::Unsupported(_) => TreebpStatus::Unsupported,
        Error::NonFinite { .. } => TreebpStatus::NonFinite,
        Error::Io(_) | Error::Fetch(_) | Error::Dataset { .. } => TreebpStatus::Io,
        _ => TreebpStatus::InvalidArgument,
    }
}

struct Fail(TreebpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TreebpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TreebpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TreebpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TreebpStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const TreebpModel) -> Result<&'a Model<f32>, Fail> {
    m.as_ref().map(|m| &m.model).ok_or_else(|| null("model"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TreebpStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn image_arg(model: &Model<f32>, pixels: *const f32, len: usize) -> Result<Tensor<f32>, Fail> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let shape = model.spec().input_shape();
    let want: usize = shape.iter().product();
    if len != want {
        return Err(Fail(
            TreebpStatus::ShapeMismatch,
            format!("model expects {want} pixels ({shape:?}), got {len}"),
        ));
    }
    Ok(Tensor::new(shape.to_vec(), std::slice::from_raw_parts(pixels, len).to_vec())?)
}

unsafe fn out_model(out: *mut *mut TreebpModel, model: Model<f32>) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(TreebpModel { model }));
    Ok(())
}

/// Message of the most recent failure on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn treebp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn treebp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a He-initialized Tree-3 model.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_new_tree3(
    k: usize,
    m: usize,
    activation: TreebpActivation,
    geometry: TreebpGeometry,
    per_class: bool,
    seed: u64,
    out: *mut *mut TreebpModel,
) -> TreebpStatus {
    guard(|| {
        let config = Tree3Config {
            k,
            m,
            activation: match activation {
                TreebpActivation::Relu => Activation::Relu,
                TreebpActivation::Sigmoid => Activation::Sigmoid,
            },
            geometry: match geometry {
                TreebpGeometry::Cifar => Geometry::Cifar,
                TreebpGeometry::Mnist => Geometry::Mnist,
            },
            layout: if per_class { TreeLayout::PerClass } else { TreeLayout::Joint },
        };
        out_model(out, Model::init(&ModelSpec::Tree3(config), seed, InitScheme::He)?)
    })
}

/// Creates a He-initialized LeNet-5 (ReLU, biases, standard widths).
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_new_lenet5(seed: u64, out: *mut *mut TreebpModel) -> TreebpStatus {
    guard(|| out_model(out, Model::init(&ModelSpec::LeNet5(LeNet5Config::default()), seed, InitScheme::He)?))
}

/// Loads a checkpoint written by `treebp train` or [`treebp_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_load(path: *const c_char, out: *mut *mut TreebpModel) -> TreebpStatus {
    guard(|| out_model(out, load_checkpoint(&path_arg(path)?)?))
}

/// # Safety
/// `model` must come from a constructor; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_save(model: *const TreebpModel, path: *const c_char) -> TreebpStatus {
    guard(|| Ok(save_checkpoint(model_ref(model)?, &path_arg(path)?)?))
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_free(model: *mut TreebpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` must come from a constructor; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_num_params(model: *const TreebpModel, out: *mut usize) -> TreebpStatus {
    guard(|| {
        let n = model_ref(model)?.num_params();
        *out.as_mut().ok_or_else(|| null("out"))? = n;
        Ok(())
    })
}

/// Pixels per input image (channels × height × width).
///
/// # Safety
/// `model` must come from a constructor; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_input_len(model: *const TreebpModel, out: *mut usize) -> TreebpStatus {
    guard(|| {
        let n = model_ref(model)?.spec().input_shape().iter().product();
        *out.as_mut().ok_or_else(|| null("out"))? = n;
        Ok(())
    })
}

/// Writes the 10 class logits of one image (channel-major, values in [-1, 1]).
///
/// # Safety
/// `pixels` must hold `len` floats and `logits` room for 10.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_logits(
    model: *const TreebpModel,
    pixels: *const f32,
    len: usize,
    logits: *mut f32,
) -> TreebpStatus {
    guard(|| {
        let model = model_ref(model)?;
        let img = image_arg(model, pixels, len)?;
        if logits.is_null() {
            return Err(null("logits"));
        }
        let out = model.logits(&img)?;
        ptr::copy_nonoverlapping(out.data().as_ptr(), logits, out.len());
        Ok(())
    })
}

/// Predicted class of one image.
///
/// # Safety
/// `pixels` must hold `len` floats; `class_out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn treebp_model_predict(
    model: *const TreebpModel,
    pixels: *const f32,
    len: usize,
    class_out: *mut u32,
) -> TreebpStatus {
    guard(|| {
        let model = model_ref(model)?;
        let img = image_arg(model, pixels, len)?;
        let c = model.predict(&img)?;
        *class_out.as_mut().ok_or_else(|| null("class_out"))? = c as u32;
        Ok(())
    })
}

/// Backward pass for one labeled image. `pruned` selects the single-route
/// pass where the model supports it.
///
/// # Safety
/// `pixels` must hold `len` floats; `stats` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn treebp_gradient_stats(
    model: *const TreebpModel,
    pixels: *const f32,
    len: usize,
    label: u32,
    pruned: bool,
    stats: *mut TreebpGradientStats,
) -> TreebpStatus {
    guard(|| {
        let model = model_ref(model)?;
        let img = image_arg(model, pixels, len)?;
        let stats = stats.as_mut().ok_or_else(|| null("stats"))?;
        let g = example_gradients(model, &img, label as usize, Engine::select(pruned, model))?;
        let (loss, _) = softmax_xent(&g.logits, label as usize)?;
        *stats = TreebpGradientStats {
            loss,
            zero_fraction: g.bundle.zero_counts.fractions(),
            nonzero_entries: g.bundle.nonzeros(),
        };
        Ok(())
    })
}

fn arch(a: TreebpArch) -> Arch {
    match a {
        TreebpArch::Lenet5 => Arch::LeNet5,
        TreebpArch::Tree3 => Arch::Tree3,
    }
}

/// Maximum number of routes from a first-layer weight to one output.
#[no_mangle]
pub extern "C" fn treebp_count_routes(a: TreebpArch) -> u64 {
    count_routes(arch(a))
}

/// First-layer gradient instances before and after pooling.
///
/// # Safety
/// `pre_pool` and `post_pool` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn treebp_count_gradient_instances(
    a: TreebpArch,
    k: usize,
    m: usize,
    pre_pool: *mut u64,
    post_pool: *mut u64,
) -> TreebpStatus {
    guard(|| {
        let c = count_gradient_instances(arch(a), k, m);
        *pre_pool.as_mut().ok_or_else(|| null("pre_pool"))? = c.pre_pool;
        *post_pool.as_mut().ok_or_else(|| null("post_pool"))? = c.post_pool;
        Ok(())
    })
}
