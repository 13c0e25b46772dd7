use crate::autodiff::{fourier_values, fourier_width, Elem, Var};
use crate::error::Result;

/// `γ(a) = [a?, sin(2^0 a), cos(2^0 a), ..., sin(2^N a), cos(2^N a)]` per scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FourierEncoding {
    pub num_bands: usize,
    pub include_input: bool,
}

impl FourierEncoding {
    pub fn new(num_bands: usize, include_input: bool) -> Self {
        Self {
            num_bands,
            include_input,
        }
    }

    /// Output width per input scalar.
    pub fn width(&self) -> usize {
        fourier_width(self.num_bands, self.include_input)
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        fourier_values(v, self.num_bands, self.include_input)
    }

    /// `[N, d] -> [N, d * width]`.
    pub fn forward<'t, E: Elem>(&self, x: Var<'t, E>) -> Result<Var<'t, E>> {
        x.fourier_encode(self.num_bands, self.include_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_with_one_band() {
        assert_eq!(FourierEncoding::new(1, false).encode(&[0.0]), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn three_scalars_three_bands() {
        let enc = FourierEncoding::new(3, false);
        assert_eq!(enc.encode(&[0.1, 0.2, 0.3]).len(), 24);
        assert_eq!(FourierEncoding::new(3, true).width(), 9);
    }

    #[test]
    fn quarter_turn() {
        let out = FourierEncoding::new(0, false).encode(&[FRAC_PI_2]);
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
    }

    #[test]
    fn pairs_on_unit_circle_and_norm_bound() {
        let enc = FourierEncoding::new(5, true);
        for &a in &[-7.3, -0.2, 0.0, 1.5, 40.0] {
            let out = enc.encode(&[a]);
            for pair in out[1..].chunks(2) {
                assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
            }
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= (enc.width() as f64).sqrt() * 1f64.max(a.abs()) + 1e-12);
        }
    }
}
