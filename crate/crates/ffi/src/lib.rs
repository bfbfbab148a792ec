//! C ABI over `dpe_nmt`.
//!
//! Every function returns a [`DpeStatus`]; on failure a message is kept per
//! thread and can be read with [`dpe_last_error`]. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`dpe_string_free`]. Models are opaque handles released with
//! [`dpe_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dpe_nmt::alignment::{assign_target_keys, parse_alignments, reorder_source};
use dpe_nmt::data::Vocab;
use dpe_nmt::decode::{bleu, translate};
use dpe_nmt::model::Transformer;
use dpe_nmt::train::Checkpoint;
use dpe_nmt::{Error, ErrorClass};

/// Result codes of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration or argument value.
    Usage = 3,
    /// Malformed or inconsistent input data or files.
    Input = 4,
    /// Internal failure.
    Runtime = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Opaque translation model with its vocabularies.
pub struct DpeModel {
    model: Transformer<f32>,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(DpeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Usage => DpeStatus::Usage,
            ErrorClass::Input => DpeStatus::Input,
            ErrorClass::Runtime => DpeStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DpeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DpeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside dpe_nmt");
            DpeStatus::Panic
        }
    }
}

unsafe fn arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(DpeStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DpeStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(DpeStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(DpeStatus::Runtime, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dpe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint and its source/target vocabulary files.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpe_model_load(
    checkpoint: *const c_char,
    src_vocab: *const c_char,
    tgt_vocab: *const c_char,
    out: *mut *mut DpeModel,
) -> DpeStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let cp = Checkpoint::read(Path::new(arg(checkpoint, "checkpoint")?))?;
        let model = cp.to_model()?;
        let src_vocab = Vocab::read(Path::new(arg(src_vocab, "src_vocab")?))?;
        let tgt_vocab = Vocab::read(Path::new(arg(tgt_vocab, "tgt_vocab")?))?;
        let cfg = model.config();
        if cfg.vocab_src != src_vocab.len() || cfg.vocab_tgt != tgt_vocab.len() {
            return Err(Failure(
                DpeStatus::Input,
                format!(
                    "vocabulary sizes {}/{} do not match the model's {}/{}",
                    src_vocab.len(),
                    tgt_vocab.len(),
                    cfg.vocab_src,
                    cfg.vocab_tgt
                ),
            ));
        }
        *out = Box::into_raw(Box::new(DpeModel {
            model,
            src_vocab,
            tgt_vocab,
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`dpe_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpe_model_free(model: *mut DpeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters of the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpe_model_num_parameters(model: *const DpeModel, out: *mut usize) -> DpeStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(DpeStatus::NullPointer, "model is null".into()))?;
        *out = m.model.num_parameters();
        Ok(())
    })
}

/// Translates one whitespace-tokenized sentence with beam search.
///
/// # Safety
/// `model` must be a live handle, `sentence` NUL-terminated and `out`
/// writable. The result must be released with [`dpe_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dpe_translate(
    model: *const DpeModel,
    sentence: *const c_char,
    beam: usize,
    out: *mut *mut c_char,
) -> DpeStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let m = model
            .as_ref()
            .ok_or_else(|| Failure(DpeStatus::NullPointer, "model is null".into()))?;
        let ids = m.src_vocab.encode(arg(sentence, "sentence")?);
        if ids.is_empty() {
            return Err(Failure(DpeStatus::Input, "empty sentence".into()));
        }
        let hyp = translate(&m.model, &ids, beam)?;
        *out = to_c(m.tgt_vocab.decode(hyp.output()))?;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn keys_for(
    src: *const c_char,
    tgt: *const c_char,
    alignment: *const c_char,
) -> Result<(Vec<String>, dpe_nmt::alignment::TargetKeyVector), Failure> {
    let src: Vec<String> = arg(src, "src")?.split_whitespace().map(str::to_string).collect();
    let tgt_len = arg(tgt, "tgt")?.split_whitespace().count();
    let links = parse_alignments(arg(alignment, "alignment")?)?;
    let keys = assign_target_keys(&links, src.len(), tgt_len)?;
    Ok((src, keys))
}

/// Reorders a source sentence into target order using a Pharaoh-format
/// alignment line.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable. The
/// result must be released with [`dpe_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dpe_reorder(
    src: *const c_char,
    tgt: *const c_char,
    alignment: *const c_char,
    out: *mut *mut c_char,
) -> DpeStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (toks, keys) = keys_for(src, tgt, alignment)?;
        *out = to_c(reorder_source(&toks, &keys)?.join(" "))?;
        Ok(())
    })
}

/// Per-source-token supervising target positions, formatted as in a keys
/// file (`-` for unaligned tokens).
///
/// # Safety
/// As for [`dpe_reorder`].
#[no_mangle]
pub unsafe extern "C" fn dpe_target_keys(
    src: *const c_char,
    tgt: *const c_char,
    alignment: *const c_char,
    out: *mut *mut c_char,
) -> DpeStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (_, keys) = keys_for(src, tgt, alignment)?;
        *out = to_c(keys.to_string())?;
        Ok(())
    })
}

/// Corpus BLEU of `n` hypothesis lines against `n` reference lines.
///
/// # Safety
/// `hyps` and `refs` must point to `n` NUL-terminated strings each; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpe_corpus_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> DpeStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if n > 0 && (hyps.is_null() || refs.is_null()) {
            return Err(Failure(DpeStatus::NullPointer, "line array is null".into()));
        }
        let lines = |p: *const *const c_char, name: &str| -> Result<Vec<&str>, Failure> {
            (0..n).map(|i| arg(*p.add(i), name)).collect()
        };
        let (h, r) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            (lines(hyps, "hypothesis")?, lines(refs, "reference")?)
        };
        *out = bleu(&h, &r)?;
        Ok(())
    })
}
