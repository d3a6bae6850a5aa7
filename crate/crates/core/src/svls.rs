//! Boundary uncertainty from annotation labels.
//!
//! A 3×3 Gaussian kernel has its center replaced by the sum of its eight
//! neighbours and is then normalised, so the center always carries half the
//! mass. Convolving it over the one-hot label and reading off the true-class
//! channel gives a smoothed true-class probability; one minus that is the
//! boundary uncertainty. Borders use replicate padding.

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, TensorF};

#[derive(Debug, Clone, PartialEq)]
pub struct SvlsKernel {
    sigma: f64,
    /// Row-major, index `(dy + 1) * 3 + (dx + 1)`.
    weights: [f64; 9],
}

impl SvlsKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel sigma must be positive, got {sigma}"
            )));
        }
        let mut w = [0.0; 9];
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                let r2 = (dx * dx + dy * dy) as f64;
                w[((dy + 1) * 3 + dx + 1) as usize] = (-r2 / (2.0 * sigma * sigma)).exp();
            }
        }
        let neighbours: f64 = w
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != 4)
            .map(|(_, v)| v)
            .sum();
        w[4] = neighbours;
        let total = 2.0 * neighbours;
        for v in w.iter_mut() {
            *v /= total;
        }
        Ok(SvlsKernel { sigma, weights: w })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64; 9] {
        &self.weights
    }

    pub fn weight(&self, dy: i32, dx: i32) -> f64 {
        self.weights[((dy + 1) * 3 + dx + 1) as usize]
    }
}

impl Default for SvlsKernel {
    fn default() -> Self {
        SvlsKernel::new(1.0).expect("sigma 1 is valid")
    }
}

/// `[H,W]` map of `1 - (kernel ⊛ onehot)[true class]`.
pub fn boundary_uncertainty(labels: &LabelMap, kernel: &SvlsKernel) -> TensorF {
    let (h, w) = (labels.height(), labels.width());
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = labels.get(y, x);
            let mut other = 0.0;
            for dy in -1i32..=1 {
                let yy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                for dx in -1i32..=1 {
                    let xx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    if labels.get(yy, xx) != c {
                        other += kernel.weight(dy, dx);
                    }
                }
            }
            // summing the off-class mass keeps uniform neighbourhoods exactly 0
            out[y * w + x] = other.clamp(0.0, 1.0);
        }
    }
    TensorF::new(vec![h, w], out).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::one_hot;
    use proptest::prelude::*;

    /// Independent route: pad the one-hot tensor, convolve every channel with
    /// the 9-tap kernel, then read the true-class channel.
    fn oracle(labels: &LabelMap, sigma: f64) -> Vec<f64> {
        let (h, w, k) = (labels.height(), labels.width(), labels.classes());
        let raw = |dy: f64, dx: f64| (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        let mut taps = [[0.0; 3]; 3];
        let mut nsum = 0.0;
        for (i, row) in taps.iter_mut().enumerate() {
            for (j, t) in row.iter_mut().enumerate() {
                if (i, j) != (1, 1) {
                    *t = raw(i as f64 - 1.0, j as f64 - 1.0);
                    nsum += *t;
                }
            }
        }
        taps[1][1] = nsum;
        let oh = one_hot(labels);
        let (ph, pw) = (h + 2, w + 2);
        let mut out = vec![0.0; h * w];
        for c in 0..k {
            let ch = oh.channel(c);
            let mut padded = vec![0.0; ph * pw];
            for py in 0..ph {
                for px in 0..pw {
                    let sy = (py as i64 - 1).clamp(0, h as i64 - 1) as usize;
                    let sx = (px as i64 - 1).clamp(0, w as i64 - 1) as usize;
                    padded[py * pw + px] = ch[sy * w + sx];
                }
            }
            for y in 0..h {
                for x in 0..w {
                    if labels.get(y, x) != c {
                        continue;
                    }
                    let mut acc = 0.0;
                    for (i, row) in taps.iter().enumerate() {
                        for (j, t) in row.iter().enumerate() {
                            acc += t * padded[(y + i) * pw + x + j];
                        }
                    }
                    out[y * w + x] = 1.0 - acc / (2.0 * nsum);
                }
            }
        }
        out
    }

    fn random_map(r: &mut Rng, h: usize, w: usize, k: usize) -> LabelMap {
        let labels = (0..h * w).map(|_| r.below(k as u64) as u8).collect();
        LabelMap::new(h, w, k, labels).unwrap()
    }

    #[test]
    fn kernel_sigma_one() {
        let k = SvlsKernel::new(1.0).unwrap();
        assert!((k.weight(0, 0) - 0.5).abs() < 1e-12);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (e, c) = ((-0.5f64).exp(), (-1.0f64).exp());
        let total = 2.0 * (4.0 * e + 4.0 * c);
        assert!((k.weight(0, 1) - e / total).abs() < 1e-12);
        assert!((k.weight(1, 1) - c / total).abs() < 1e-12);
        assert!((k.weight(0, 1) - 0.07780).abs() < 1e-5);
        assert!((k.weight(-1, -1) - 0.04719).abs() < 1e-5);
    }

    #[test]
    fn kernel_wide_sigma_flattens_neighbours() {
        let k = SvlsKernel::new(1e6).unwrap();
        assert!((k.weight(0, 1) - 1.0 / 16.0).abs() < 1e-9);
        assert!((k.weight(1, 1) - 1.0 / 16.0).abs() < 1e-9);
        assert!((k.weight(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_sigma() {
        assert!(SvlsKernel::new(0.0).is_err());
        assert!(SvlsKernel::new(-1.0).is_err());
        assert!(SvlsKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn uniform_map_has_no_uncertainty() {
        let l = LabelMap::new(4, 5, 3, vec![2; 20]).unwrap();
        assert!(boundary_uncertainty(&l, &SvlsKernel::default())
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn straight_edge() {
        let labels = (0..25).map(|i| u8::from(i % 5 >= 3)).collect();
        let l = LabelMap::new(5, 5, 2, labels).unwrap();
        let bu = boundary_uncertainty(&l, &SvlsKernel::default());
        let expected = oracle(&l, 1.0);
        // column 2 sits left of the boundary
        assert!((bu.data()[2 * 5 + 2] - 0.1722).abs() < 1e-4);
        assert!((bu.data()[2 * 5 + 2] - expected[2 * 5 + 2]).abs() < 1e-12);
        assert_eq!(bu.data()[2 * 5], 0.0);
    }

    #[test]
    fn isolated_pixel() {
        let mut labels = vec![0u8; 25];
        labels[12] = 1;
        let l = LabelMap::new(5, 5, 2, labels).unwrap();
        let bu = boundary_uncertainty(&l, &SvlsKernel::default());
        assert!((bu.data()[12] - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_padded_convolution_oracle(h in 1usize..33, w in 1usize..33, k in 1usize..6, seed in any::<u64>()) {
            let l = random_map(&mut Rng::new(seed), h, w, k);
            let bu = boundary_uncertainty(&l, &SvlsKernel::default());
            for (a, b) in bu.data().iter().zip(oracle(&l, 1.0)) {
                prop_assert!((a - b).abs() < 1e-6);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }

        #[test]
        fn invariant_under_relabeling(seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let l = random_map(&mut r, 9, 7, 4);
            let mut perm: Vec<u8> = (0..4).collect();
            r.shuffle(&mut perm);
            let relabeled = LabelMap::new(9, 7, 4, l.labels().iter().map(|&c| perm[c as usize]).collect()).unwrap();
            let k = SvlsKernel::default();
            prop_assert_eq!(boundary_uncertainty(&l, &k), boundary_uncertainty(&relabeled, &k));
        }
    }
}
