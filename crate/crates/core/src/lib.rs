//! Adversarial unsupervised domain adaptation with an ensemble of Monte-Carlo dropout
//! discriminators, grown over training by a curriculum on the number of sampled members.
//!
//! The numeric core ([`autodiff`], [`nn`]) is generic over [`Scalar`]; the training
//! pipeline runs in `f64`. Concrete aliases for both precisions live at the crate root.

pub mod adversarial;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Mlp = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type SgdState = nn::SgdState<f64>;
pub type MaskSet = adversarial::MaskSet<f64>;

/// Formats `x` with 9 significant digits, like C's `%.9g`.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let sci = format!("{x:.8e}");
    // rounding can bump the exponent (9.9999999995 -> 1.00000000e1)
    let exp = sci
        .split_once('e')
        .and_then(|(_, e)| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mant, e) = sci.split_once('e').expect("scientific format");
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        let e: i32 = e.parse().expect("exponent");
        format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}
