//! One arithmetic surface, two backends.
//!
//! Residual functionals are written once against this trait and evaluated
//! either on plain `f64` (closed-form oracles, baseline comparisons) or on
//! the autodiff tape (training, where parameter gradients must flow through
//! every stencil combination).

use crate::autodiff::{Tape, VarHandle};
use crate::error::{DgmError, Result};

pub trait Algebra {
    type V: Copy;

    fn konst(&mut self, c: f64) -> Result<Self::V>;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn div(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn neg(&mut self, a: Self::V) -> Result<Self::V>;
    fn exp(&mut self, a: Self::V) -> Result<Self::V>;
    fn square(&mut self, a: Self::V) -> Result<Self::V>;
    fn max0(&mut self, a: Self::V) -> Result<Self::V>;

    /// Multiplication by a scalar constant.
    fn scale(&mut self, c: f64, a: Self::V) -> Result<Self::V> {
        let k = self.konst(c)?;
        self.mul(k, a)
    }

    /// a + c·b
    fn add_scaled(&mut self, a: Self::V, c: f64, b: Self::V) -> Result<Self::V> {
        let cb = self.scale(c, b)?;
        self.add(a, cb)
    }

    fn value(&self, a: Self::V) -> f64;
}

/// Plain `f64` backend with the same domain checks as the tape.
pub struct RealAlgebra;

impl Algebra for RealAlgebra {
    type V = f64;

    fn konst(&mut self, c: f64) -> Result<f64> {
        finite(c)
    }
    fn add(&mut self, a: f64, b: f64) -> Result<f64> {
        finite(a + b)
    }
    fn sub(&mut self, a: f64, b: f64) -> Result<f64> {
        finite(a - b)
    }
    fn mul(&mut self, a: f64, b: f64) -> Result<f64> {
        finite(a * b)
    }
    fn div(&mut self, a: f64, b: f64) -> Result<f64> {
        if b == 0.0 {
            return Err(DgmError::Domain {
                op: "div",
                detail: "denominator is zero".to_string(),
            });
        }
        finite(a / b)
    }
    fn neg(&mut self, a: f64) -> Result<f64> {
        Ok(-a)
    }
    fn exp(&mut self, a: f64) -> Result<f64> {
        finite(a.exp())
    }
    fn square(&mut self, a: f64) -> Result<f64> {
        finite(a * a)
    }
    fn max0(&mut self, a: f64) -> Result<f64> {
        Ok(a.max(0.0))
    }
    fn value(&self, a: f64) -> f64 {
        a
    }
}

#[inline]
fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DgmError::NonFinite {
            context: "scalar arithmetic".to_string(),
        })
    }
}

impl Algebra for Tape {
    type V = VarHandle;

    fn konst(&mut self, c: f64) -> Result<VarHandle> {
        self.constant(c)
    }
    fn add(&mut self, a: VarHandle, b: VarHandle) -> Result<VarHandle> {
        Tape::add(self, a, b)
    }
    fn sub(&mut self, a: VarHandle, b: VarHandle) -> Result<VarHandle> {
        Tape::sub(self, a, b)
    }
    fn mul(&mut self, a: VarHandle, b: VarHandle) -> Result<VarHandle> {
        Tape::mul(self, a, b)
    }
    fn div(&mut self, a: VarHandle, b: VarHandle) -> Result<VarHandle> {
        Tape::div(self, a, b)
    }
    fn neg(&mut self, a: VarHandle) -> Result<VarHandle> {
        Tape::neg(self, a)
    }
    fn exp(&mut self, a: VarHandle) -> Result<VarHandle> {
        Tape::exp(self, a)
    }
    fn square(&mut self, a: VarHandle) -> Result<VarHandle> {
        Tape::square(self, a)
    }
    fn max0(&mut self, a: VarHandle) -> Result<VarHandle> {
        Tape::max0(self, a)
    }
    fn value(&self, a: VarHandle) -> f64 {
        Tape::value(self, a)
    }
}
