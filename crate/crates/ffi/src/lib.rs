//! C interface to `bft-core`.
//!
//! Every fallible call returns a status code: `BFT_OK` or the stable code of
//! the underlying error. The message for the most recent failure on the
//! calling thread is available from [`bft_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bft_core::assembly::{assemble_target, fuse, load_model, save_target, snet_head, Model};
use bft_core::bank::{build_bank, load_bank, sample, save_bank, BankSource, FilterBank};
use bft_core::model::{save_net, NetSpec};
use bft_core::{Error, Tensor};

pub const BFT_OK: i32 = 0;
/// A required pointer argument was null.
pub const BFT_ERR_NULL: i32 = 100;
/// A string argument was not valid UTF-8.
pub const BFT_ERR_UTF8: i32 = 101;
/// An output buffer was too small; the required length is written back.
pub const BFT_ERR_BUFFER: i32 = 102;
/// The call panicked. This is a bug.
pub const BFT_ERR_PANIC: i32 = 103;
/// The handle holds the wrong kind of model for this call.
pub const BFT_ERR_KIND: i32 = 104;

/// A plain network or an assembled target network.
pub struct BftModel(Model);

/// A bank of filter-trees.
pub struct BftBank(FilterBank);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.code(), e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BFT_OK,
        Ok(Err(Failure(code, message))) => {
            set_error(message);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            BFT_ERR_PANIC
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    str_arg(p).map(PathBuf::from)
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(BFT_ERR_NULL, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BFT_ERR_UTF8, "string argument is not UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(BFT_ERR_NULL, "null handle".into()))
}

fn out_ptr<T>(p: *mut T) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(BFT_ERR_NULL, "null output pointer".into()))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bft_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a `.cnn` file holding either a network or a target network.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bft_model_load(path: *const c_char, out: *mut *mut BftModel) -> i32 {
    guard(|| {
        out_ptr(out)?;
        let model = load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(BftModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bft_model_save(model: *const BftModel, path: *const c_char) -> i32 {
    guard(|| {
        let path = path_arg(path)?;
        match &handle(model)?.0 {
            Model::Net { spec, params } => save_net(spec, params, path)?,
            Model::Target(t) => save_target(t, path)?,
        }
        Ok(())
    })
}

/// Number of floats in one `C x H x W` input.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bft_model_input_len(model: *const BftModel, out: *mut usize) -> i32 {
    guard(|| {
        out_ptr(out)?;
        let shape = match &handle(model)?.0 {
            Model::Net { spec, .. } => spec.input_shape().to_vec(),
            Model::Target(t) => t.prefix.input_shape.clone(),
        };
        *out = shape.iter().product();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bft_model_num_classes(model: *const BftModel, out: *mut usize) -> i32 {
    guard(|| {
        out_ptr(out)?;
        *out = match &handle(model)?.0 {
            Model::Net { spec, .. } => spec.output_shape().iter().product(),
            Model::Target(t) => t.num_classes(),
        };
        Ok(())
    })
}

/// Class logits for one input. On `BFT_ERR_BUFFER`, `*logits_len` holds the
/// required length.
///
/// # Safety
/// `input` must point to `input_len` floats and `logits` to `*logits_len`.
#[no_mangle]
pub unsafe extern "C" fn bft_model_logits(
    model: *const BftModel,
    input: *const f32,
    input_len: usize,
    logits: *mut f32,
    logits_len: *mut usize,
) -> i32 {
    guard(|| {
        let model = &handle(model)?.0;
        if input.is_null() || logits.is_null() || logits_len.is_null() {
            return Err(Failure(BFT_ERR_NULL, "null buffer".into()));
        }
        let shape = match model {
            Model::Net { spec, .. } => spec.input_shape().to_vec(),
            Model::Target(t) => t.prefix.input_shape.clone(),
        };
        let x = Tensor::new(shape, std::slice::from_raw_parts(input, input_len).to_vec())?;
        let y = model.logits(&x)?;
        let need = y.len();
        if *logits_len < need {
            *logits_len = need;
            return Err(Failure(
                BFT_ERR_BUFFER,
                format!("logits buffer needs {need} floats"),
            ));
        }
        std::slice::from_raw_parts_mut(logits, need).copy_from_slice(y.data());
        *logits_len = need;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bft_model_free(model: *mut BftModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Pools every layer-`layer` filter-tree of `count` plain networks. Source
/// ids double as task names and must be distinct.
///
/// # Safety
/// `models` and `ids` must each point to `count` valid entries.
#[no_mangle]
pub unsafe extern "C" fn bft_bank_build(
    models: *const *const BftModel,
    ids: *const *const c_char,
    count: usize,
    layer: usize,
    out: *mut *mut BftBank,
) -> i32 {
    guard(|| {
        out_ptr(out)?;
        if count > 0 && (models.is_null() || ids.is_null()) {
            return Err(Failure(BFT_ERR_NULL, "null source array".into()));
        }
        let mut sources = Vec::with_capacity(count);
        for i in 0..count {
            let id = str_arg(*ids.add(i))?;
            match &handle(*models.add(i))?.0 {
                Model::Net { spec, params } => sources.push(BankSource {
                    spec,
                    params,
                    source_id: id,
                    task: id,
                }),
                Model::Target(_) => {
                    return Err(Failure(
                        BFT_ERR_KIND,
                        format!("source {id:?} is a target network"),
                    ))
                }
            }
        }
        let bank = build_bank(&sources, layer)?;
        *out = Box::into_raw(Box::new(BftBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bft_bank_load(path: *const c_char, out: *mut *mut BftBank) -> i32 {
    guard(|| {
        out_ptr(out)?;
        let bank = load_bank(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(BftBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bft_bank_save(bank: *const BftBank, path: *const c_char) -> i32 {
    guard(|| {
        save_bank(&handle(bank)?.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bft_bank_len(bank: *const BftBank, out: *mut usize) -> i32 {
    guard(|| {
        out_ptr(out)?;
        *out = handle(bank)?.0.len();
        Ok(())
    })
}

/// # Safety
/// `bank` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bft_bank_free(bank: *mut BftBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Samples `n` trees with `seed`, fuses them and adds a freshly initialised
/// small-net head with `num_classes` outputs. The result is untrained.
///
/// # Safety
/// `bank` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bft_target_assemble(
    bank: *const BftBank,
    n: usize,
    seed: u64,
    num_classes: usize,
    out: *mut *mut BftModel,
) -> i32 {
    guard(|| {
        out_ptr(out)?;
        let bank = &handle(bank)?.0;
        let selection = sample(bank, n, seed)?;
        let prefix = fuse(bank, &selection)?;
        let head = snet_head(
            &NetSpec::snet(num_classes),
            bank.apex_layer(),
            n,
            num_classes,
        )?;
        let target = assemble_target(prefix, head, seed)?;
        *out = Box::into_raw(Box::new(BftModel(Model::Target(target))));
        Ok(())
    })
}
