//! Sinusoidal positional/directional encoding: each scalar v becomes
//! (sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{N-1} pi v), cos(2^{N-1} pi v)),
//! optionally with the raw value prepended.

use crate::autodiff::{cos_pi, sin_pi};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Number of frequency octaves N; frequencies are 2^0 .. 2^{N-1}.
    pub n_freqs: usize,
    /// Prepend the raw component before its sin/cos block.
    pub include_input: bool,
}

impl EncodingConfig {
    pub fn new(n_freqs: usize, include_input: bool) -> Self {
        EncodingConfig {
            n_freqs,
            include_input,
        }
    }

    /// Default for positions (original-NeRF convention).
    pub fn position_default() -> Self {
        EncodingConfig::new(10, false)
    }

    /// Default for view directions.
    pub fn direction_default() -> Self {
        EncodingConfig::new(4, false)
    }

    /// Output width per input scalar.
    pub fn dim_per_component(&self) -> usize {
        2 * self.n_freqs + usize::from(self.include_input)
    }

    /// Output width for an input of `input_dim` components.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.dim_per_component()
    }
}

/// Encode a vector; component blocks are concatenated in input order.
pub fn encode(v: &[f64], cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.output_dim(v.len()));
    encode_into(v, cfg, &mut out);
    out
}

/// Append the encoding of `v` onto `out` (used to assemble batch matrices
/// without intermediate allocations).
pub fn encode_into(v: &[f64], cfg: &EncodingConfig, out: &mut Vec<f64>) {
    for &c in v {
        if cfg.include_input {
            out.push(c);
        }
        let mut scaled = c;
        for _ in 0..cfg.n_freqs {
            out.push(sin_pi(scaled));
            out.push(cos_pi(scaled));
            scaled *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_gradient, ParamStore, Tape, Tensor};
    use proptest::prelude::*;

    #[test]
    fn zero_input_gives_alternating_zero_one_exactly() {
        let cfg = EncodingConfig::new(2, false);
        assert_eq!(encode(&[0.0], &cfg), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn half_input_single_freq_is_one_zero_exactly() {
        let cfg = EncodingConfig::new(1, false);
        assert_eq!(encode(&[0.5], &cfg), vec![1.0, 0.0]);
    }

    #[test]
    fn direction_width_for_prompt_concatenation() {
        let cfg = EncodingConfig::new(4, false);
        assert_eq!(encode(&[0.1, 0.2, 0.3], &cfg).len(), 24);
        assert_eq!(cfg.output_dim(3), 24);
    }

    #[test]
    fn include_input_prepends_raw_component() {
        let cfg = EncodingConfig::new(1, true);
        let got = encode(&[0.25], &cfg);
        assert_eq!(got.len(), 3);
        assert_eq!(got[0], 0.25);
    }

    /// The gradient of sin(2^k pi v) / cos(2^k pi v) through the tape matches
    /// the analytic derivative at every frequency the encoder emits.
    #[test]
    fn encoding_gradients_match_analytic_derivative() {
        let pi = std::f64::consts::PI;
        for k in 0..10u32 {
            let scale = f64::from(2u32.pow(k));
            for &v in &[0.017, -0.41, 0.73, 0.99] {
                let mut params = ParamStore::new();
                params.insert("v", Tensor::scalar(v));

                let mut tape = Tape::new();
                let x = tape.param("v", params.get("v").unwrap()).unwrap();
                let s = tape.constant(Tensor::scalar(scale)).unwrap();
                let scaled = tape.mul(x, s).unwrap();
                let sin = tape.sin_pi(scaled).unwrap();
                let grads = tape.backward_scalar(sin).unwrap();
                let analytic = scale * pi * cos_pi(scale * v);
                assert!(
                    (grads["v"].item() - analytic).abs() <= 1e-8,
                    "sin k={} v={}",
                    k,
                    v
                );

                let mut tape = Tape::new();
                let x = tape.param("v", params.get("v").unwrap()).unwrap();
                let s = tape.constant(Tensor::scalar(scale)).unwrap();
                let scaled = tape.mul(x, s).unwrap();
                let cos = tape.cos_pi(scaled).unwrap();
                let grads = tape.backward_scalar(cos).unwrap();
                let analytic = -scale * pi * sin_pi(scale * v);
                assert!(
                    (grads["v"].item() - analytic).abs() <= 1e-8,
                    "cos k={} v={}",
                    k,
                    v
                );

                // And the same figure via the finite-difference oracle.
                let fd = finite_difference_gradient(
                    |p| Ok(sin_pi(scale * p.get("v").unwrap().item())),
                    &params,
                    1e-6,
                )
                .unwrap();
                assert!((fd["v"].item() - scale * pi * cos_pi(scale * v)).abs() < 1e-3);
            }
        }
    }

    proptest! {
        #[test]
        fn output_length_formula_holds(
            dim in 1usize..5,
            n_freqs in 0usize..11,
            include in proptest::bool::ANY,
            seed in 0u64..1000,
        ) {
            let cfg = EncodingConfig::new(n_freqs, include);
            let v: Vec<f64> = (0..dim)
                .map(|i| ((seed as f64 + i as f64) * 0.37).sin())
                .collect();
            prop_assert_eq!(encode(&v, &cfg).len(), dim * (2 * n_freqs + usize::from(include)));
        }

        #[test]
        fn encoding_is_2_periodic(v in -1.0f64..1.0, n_freqs in 1usize..8) {
            let cfg = EncodingConfig::new(n_freqs, false);
            let a = encode(&[v], &cfg);
            let b = encode(&[v + 2.0], &cfg);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn encoding_values_bounded(v in -10.0f64..10.0) {
            let cfg = EncodingConfig::new(6, false);
            for x in encode(&[v], &cfg) {
                prop_assert!(x.abs() <= 1.0);
            }
        }
    }
}
