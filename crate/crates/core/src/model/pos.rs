//! Sinusoidal positional encodings.

use super::{ModelError, Result};
use crate::tensor::{Real, Tensor};

const BASE: f64 = 10_000.0;

/// 2D encoding laid out `[C, H, W]`. The first `C/2` channels encode the row,
/// the last `C/2` the column, each as interleaved sine/cosine pairs.
pub fn pos2d<T: Real>(height: usize, width: usize, channels: usize) -> Result<Tensor<T>> {
    if channels == 0 || !channels.is_multiple_of(4) {
        return Err(ModelError::Config(format!(
            "2D positional encoding needs channels divisible by 4, got {channels}"
        )));
    }
    let half = channels / 2;
    let quarter = channels / 4;
    let plane = height * width;
    let mut data = vec![T::zero(); channels * plane];
    for i in 0..quarter {
        let freq = BASE.powf(-(i as f64) / quarter as f64);
        for y in 0..height {
            for x in 0..width {
                let at = y * width + x;
                let (sy, cy) = (y as f64 * freq).sin_cos();
                let (sx, cx) = (x as f64 * freq).sin_cos();
                data[(2 * i) * plane + at] = T::lit(sy);
                data[(2 * i + 1) * plane + at] = T::lit(cy);
                data[(half + 2 * i) * plane + at] = T::lit(sx);
                data[(half + 2 * i + 1) * plane + at] = T::lit(cx);
            }
        }
    }
    Ok(Tensor::new(vec![channels, height, width], data)?)
}

/// 1D encoding `[len, d]` for token positions.
pub fn pos1d<T: Real>(len: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(ModelError::Config(format!("1D positional encoding needs an even width, got {d}")));
    }
    Ok(Tensor::from_fn(vec![len, d], |k| {
        let (p, c) = (k / d, k % d);
        let angle = p as f64 * BASE.powf(-((c / 2 * 2) as f64) / d as f64);
        T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_sin_zero_cos_one() {
        let p: Tensor<f64> = pos2d(3, 4, 16).unwrap();
        for c in 0..16 {
            let expected = if c % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(p.data()[c * 12], expected);
        }
        assert!(p.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(pos2d::<f32>(2, 2, 6).is_err());
    }

    #[test]
    fn injective_on_a_64_grid() {
        let (h, w, c) = (64, 64, 8);
        let p: Tensor<f64> = pos2d(h, w, c).unwrap();
        let vec_at = |k: usize| -> Vec<f64> { (0..c).map(|ch| p.data()[ch * h * w + k]).collect() };
        let vecs: Vec<Vec<f64>> = (0..h * w).map(vec_at).collect();
        for a in 0..vecs.len() {
            for b in a + 1..vecs.len() {
                let d: f64 = vecs[a].iter().zip(&vecs[b]).map(|(x, y)| (x - y).abs()).sum();
                assert!(d > 1e-6, "positions {a} and {b} collide");
            }
        }
    }

    #[test]
    fn one_dimensional() {
        let p: Tensor<f64> = pos1d(5, 6).unwrap();
        assert_eq!(&p.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((p.data()[6] - 1f64.sin()).abs() < 1e-12);
    }
}
