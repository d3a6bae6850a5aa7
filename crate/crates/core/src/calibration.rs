//! Temperature scaling of teacher logits.

use crate::error::{Error, Result};
use crate::tensor::{softmax_channels, LabelMap, TensorF};

pub const ECE_BINS: usize = 15;
pub const SEARCH_LOWER: f64 = 0.05;
pub const SEARCH_UPPER: f64 = 10.0;
const SEARCH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t.is_finite() {
            Ok(Temperature(t))
        } else {
            Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {t}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub temperature: Temperature,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
}

impl CalibrationReport {
    pub const CSV_HEADER: &'static str = "T,nll_before,nll_after,ece_before,ece_after";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.temperature.0, self.nll_before, self.nll_after, self.ece_before, self.ece_after
        )
    }
}

/// Softmax of `logits / T` over channels.
pub fn scaled_softmax(logits: &TensorF, t: Temperature) -> TensorF {
    softmax_channels(logits, t.0)
}

/// Maximum channel probability per pixel, `[H,W]`.
pub fn confidence(probs: &TensorF) -> Result<TensorF> {
    let (k, h, w) = probs.chw()?;
    let plane = h * w;
    let d = probs.data();
    let out = (0..plane)
        .map(|p| {
            (0..k)
                .map(|c| d[c * plane + p])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    TensorF::new(vec![h, w], out)
}

/// `1 - confidence`, the per-pixel prediction uncertainty.
pub fn prediction_uncertainty(probs: &TensorF) -> Result<TensorF> {
    let mut c = confidence(probs)?;
    for v in c.data_mut() {
        *v = (1.0 - *v).clamp(0.0, 1.0);
    }
    Ok(c)
}

fn check_pairs(logits: &[TensorF], labels: &[LabelMap]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Empty("no calibration samples".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit maps vs {} label maps",
            logits.len(),
            labels.len()
        )));
    }
    for (z, l) in logits.iter().zip(labels) {
        let (k, h, w) = z.chw()?;
        if (k, h, w) != (l.classes(), l.height(), l.width()) {
            return Err(Error::Shape(format!(
                "logits {:?} vs labels {}x{} with {} classes",
                z.shape(),
                l.height(),
                l.width(),
                l.classes()
            )));
        }
    }
    Ok(())
}

/// Mean per-pixel negative log-likelihood of `softmax(z / T)`.
pub fn mean_nll(logits: &[TensorF], labels: &[LabelMap], t: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (z, l) in logits.iter().zip(labels) {
        let k = l.classes();
        let plane = l.len();
        let d = z.data();
        for (p, &y) in l.labels().iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if d[c * plane + p] > d[best * plane + p] {
                    best = c;
                }
            }
            let max = d[best * plane + p] / t;
            // ln_1p keeps the tail mass when the top logit dominates
            let tail: f64 = (0..k)
                .filter(|&c| c != best)
                .map(|c| (d[c * plane + p] / t - max).exp())
                .sum();
            total += (max - d[y as usize * plane + p] / t) + tail.ln_1p();
        }
        count += plane;
    }
    total / count as f64
}

/// Expected calibration error over equal-width confidence bins `(lo, hi]`.
pub fn ece(probs: &[TensorF], labels: &[LabelMap], bins: usize) -> f64 {
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let mut n = 0usize;
    for (pr, l) in probs.iter().zip(labels) {
        let k = l.classes();
        let plane = l.len();
        let d = pr.data();
        for (p, &y) in l.labels().iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if d[c * plane + p] > d[best * plane + p] {
                    best = c;
                }
            }
            let conf = d[best * plane + p];
            let b = ((conf * bins as f64).ceil() as usize).clamp(1, bins) - 1;
            conf_sum[b] += conf;
            hits[b] += f64::from(u8::from(best == y as usize));
            counts[b] += 1;
        }
        n += plane;
    }
    (0..bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| (hits[b] - conf_sum[b]).abs() / n as f64)
        .sum()
}

/// Fit `T` by golden-section search on `log T` over `[0.05, 10]`, minimising
/// mean NLL on the given (held-out) samples.
pub fn fit_temperature(logits: &[TensorF], labels: &[LabelMap]) -> Result<CalibrationReport> {
    check_pairs(logits, labels)?;
    let f = |log_t: f64| mean_nll(logits, labels, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (SEARCH_LOWER.ln(), SEARCH_UPPER.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b.exp() - a.exp() > SEARCH_TOLERANCE {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid.exp(), f(mid));
    // unimodality can push the optimum onto a bound
    for bound in [SEARCH_LOWER, SEARCH_UPPER] {
        let v = mean_nll(logits, labels, bound);
        if v < best.1 {
            best = (bound, v);
        }
    }
    let nll_before = mean_nll(logits, labels, 1.0);
    if nll_before <= best.1 {
        best = (1.0, nll_before);
    }
    let t = Temperature::new(best.0)?;
    let before: Vec<TensorF> = logits.iter().map(|z| softmax_channels(z, 1.0)).collect();
    let after: Vec<TensorF> = logits.iter().map(|z| scaled_softmax(z, t)).collect();
    Ok(CalibrationReport {
        temperature: t,
        nll_before,
        nll_after: best.1,
        ece_before: ece(&before, labels, ECE_BINS),
        ece_after: ece(&after, labels, ECE_BINS),
    })
}

/// Synthetic logits whose softmax is calibrated by construction: labels are
/// drawn from the softmax of the returned logits. Shared by tests.
pub fn synthetic_calibrated(
    samples: usize,
    classes: usize,
    side: usize,
    logit_scale: f64,
    seed: u64,
) -> (Vec<TensorF>, Vec<LabelMap>) {
    let mut r = crate::rng::Rng::new(seed);
    let plane = side * side;
    let mut zs = Vec::with_capacity(samples);
    let mut ls = Vec::with_capacity(samples);
    let mut probs = vec![0.0; classes];
    for _ in 0..samples {
        let z: Vec<f64> = (0..classes * plane)
            .map(|_| logit_scale * r.normal())
            .collect();
        let mut labels = Vec::with_capacity(plane);
        for p in 0..plane {
            crate::tensor::softmax_pixel(&z, plane, p, 1.0, &mut probs);
            let u = r.uniform();
            let mut acc = 0.0;
            let mut y = classes - 1;
            for (c, &pc) in probs.iter().enumerate() {
                acc += pc;
                if u < acc {
                    y = c;
                    break;
                }
            }
            labels.push(y as u8);
        }
        zs.push(TensorF::new(vec![classes, side, side], z).unwrap());
        ls.push(LabelMap::new(side, side, classes, labels).unwrap());
    }
    (zs, ls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::argmax_channels;
    use proptest::prelude::*;

    fn scaled(zs: &[TensorF], c: f64) -> Vec<TensorF> {
        zs.iter()
            .map(|z| {
                TensorF::new(z.shape().to_vec(), z.data().iter().map(|v| v * c).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn unit_temperature_is_plain_softmax() {
        let z = TensorF::new(vec![2, 1, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(
            scaled_softmax(&z, Temperature::default()),
            softmax_channels(&z, 1.0)
        );
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let z = TensorF::new(vec![4, 1, 1], vec![5.0, -3.0, 0.0, 9.0]).unwrap();
        let p = scaled_softmax(&z, Temperature::new(1e6).unwrap());
        assert!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-4));
    }

    #[test]
    fn confidence_examples() {
        let p = TensorF::new(vec![2, 1, 1], vec![0.8, 0.2]).unwrap();
        assert_eq!(confidence(&p).unwrap().data(), &[0.8]);
        let p = TensorF::filled(vec![4, 1, 1], 0.25);
        assert_eq!(confidence(&p).unwrap().data(), &[0.25]);
        let p = TensorF::new(vec![3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(confidence(&p).unwrap().data(), &[1.0]);
        assert_eq!(prediction_uncertainty(&p).unwrap().data(), &[0.0]);
    }

    #[test]
    fn temperature_rejects_non_positive() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-2.0).is_err());
    }

    #[test]
    fn fit_rejects_empty() {
        assert!(matches!(fit_temperature(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn recovers_scale_factor() {
        let (zs, ls) = synthetic_calibrated(8, 3, 32, 2.0, 11);
        for c in [1.0, 2.0] {
            let rep = fit_temperature(&scaled(&zs, c), &ls).unwrap();
            let t = rep.temperature.value();
            assert!((t / c - 1.0).abs() < 0.05, "c={c} fitted {t}");
            assert!(rep.nll_after <= rep.nll_before + 1e-9);
        }
    }

    #[test]
    fn confident_correct_pixel_drives_t_to_lower_bound() {
        // NLL of [a, 0] with label 0 is ln(1 + e^{-a/T}), decreasing as T shrinks.
        let z = TensorF::new(vec![2, 1, 1], vec![3.0, 0.0]).unwrap();
        let l = LabelMap::new(1, 1, 2, vec![0]).unwrap();
        let nll = |t: f64| (1.0 + (-3.0 / t).exp()).ln();
        assert!(nll(0.1) < nll(1.0) && nll(1.0) < nll(5.0));
        let rep = fit_temperature(&[z], &[l]).unwrap();
        assert!((rep.temperature.value() - SEARCH_LOWER).abs() < 1e-3);
        assert!((rep.nll_after - nll(rep.temperature.value())).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let (zs, ls) = synthetic_calibrated(2, 3, 8, 1.5, 4);
        let zs = scaled(&zs, 1.7);
        let rep = fit_temperature(&zs, &ls).unwrap();
        let (lo, hi) = (SEARCH_LOWER.ln(), SEARCH_UPPER.ln());
        let mut best = (0.0, f64::INFINITY);
        for i in 0..10_000 {
            let t = (lo + (hi - lo) * i as f64 / 9_999.0).exp();
            let v = mean_nll(&zs, &ls, t);
            if v < best.1 {
                best = (t, v);
            }
        }
        // grid spacing near T≈1.7 is ~9e-4, search tolerance 1e-3
        assert!(
            (rep.temperature.value() - best.0).abs() < 3e-3,
            "{} vs {}",
            rep.temperature.value(),
            best.0
        );
        assert!(rep.nll_after <= best.1 + 1e-7);
    }

    #[test]
    fn ece_zero_for_perfect_confident_predictions() {
        let p = TensorF::new(vec![2, 1, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = LabelMap::new(1, 3, 2, vec![0, 1, 0]).unwrap();
        assert_eq!(ece(&[p], &[l], ECE_BINS), 0.0);
    }

    #[test]
    fn ece_of_overconfident_bin() {
        // all in the (0.8667, 0.9333] bin, confidence 0.9, accuracy 0.5
        let p = TensorF::new(vec![2, 1, 2], vec![0.9, 0.9, 0.1, 0.1]).unwrap();
        let l = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        assert!((ece(&[p], &[l], ECE_BINS) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn csv_row_format() {
        let rep = CalibrationReport {
            temperature: Temperature::new(1.5).unwrap(),
            nll_before: 0.5,
            nll_after: 0.25,
            ece_before: 0.1,
            ece_after: 0.05,
        };
        assert_eq!(
            rep.csv_row(),
            "1.500000,0.500000,0.250000,0.100000,0.050000"
        );
    }

    proptest! {
        #[test]
        fn scaling_preserves_argmax(seed in any::<u64>(), t in 0.05f64..10.0) {
            let mut r = Rng::new(seed);
            let z = TensorF::new(vec![4, 3, 3], (0..36).map(|_| 3.0 * r.normal()).collect()).unwrap();
            let a = argmax_channels(&softmax_channels(&z, 1.0)).unwrap();
            let b = argmax_channels(&scaled_softmax(&z, Temperature::new(t).unwrap())).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
