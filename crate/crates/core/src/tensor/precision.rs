use std::sync::atomic::{AtomicU8, Ordering};

/// Arithmetic precision of every tensor operation in the process.
///
/// Storage is always `f64`; in [`Precision::F32`] mode each operation result
/// is rounded to the nearest `f32`, which reproduces single-precision
/// training numerics while keeping one code path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

static MODE: AtomicU8 = AtomicU8::new(1);

pub fn set_precision(p: Precision) {
    MODE.store(
        match p {
            Precision::F32 => 0,
            Precision::F64 => 1,
        },
        Ordering::SeqCst,
    );
}

pub fn precision() -> Precision {
    match MODE.load(Ordering::Relaxed) {
        0 => Precision::F32,
        _ => Precision::F64,
    }
}

pub(crate) fn round_slice(v: &mut [f64]) {
    if precision() == Precision::F32 {
        for x in v {
            *x = *x as f32 as f64;
        }
    }
}
