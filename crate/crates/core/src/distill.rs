//! Pixel-wise self-distillation loss and its curriculum-masked mean.

use crate::curriculum::CurriculumMask;
use crate::error::{Error, Result};
use crate::tensor::{softmax_pixel, LabelMap, TensorF};

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-pixel loss maps for one image, each `[H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMaps {
    pub ce: TensorF,
    pub kl: TensorF,
    pub sd: TensorF,
    pub pcd: TensorF,
    pub active_count: usize,
}

/// `-ln p(true class)` per pixel.
pub fn pixel_ce(student_probs: &TensorF, labels: &LabelMap) -> Result<TensorF> {
    let (k, h, w) = student_probs.chw()?;
    check_labels(k, h, w, labels)?;
    let plane = h * w;
    let d = student_probs.data();
    let out = labels
        .labels()
        .iter()
        .enumerate()
        .map(|(p, &y)| -d[y as usize * plane + p].max(PROB_FLOOR).ln())
        .collect();
    TensorF::new(vec![h, w], out)
}

/// Re-soften a probability map at temperature `tau`: `softmax(ln p / tau)`.
pub fn soften(probs: &TensorF, tau: f64) -> Result<TensorF> {
    let (k, h, w) = probs.chw()?;
    let logs: Vec<f64> = probs
        .data()
        .iter()
        .map(|p| p.max(PROB_FLOOR).ln())
        .collect();
    let z = TensorF::new(vec![k, h, w], logs)?;
    Ok(crate::tensor::softmax_channels(&z, tau))
}

/// `tau^2 · KL(soften(teacher) ‖ soften(student))` per pixel.
pub fn pixel_kl(teacher_probs: &TensorF, student_probs: &TensorF, tau: f64) -> Result<TensorF> {
    if teacher_probs.shape() != student_probs.shape() {
        return Err(Error::Shape(format!(
            "teacher {:?} vs student {:?}",
            teacher_probs.shape(),
            student_probs.shape()
        )));
    }
    check_tau(tau)?;
    let (k, h, w) = teacher_probs.chw()?;
    let plane = h * w;
    let t = soften(teacher_probs, tau)?;
    let s = soften(student_probs, tau)?;
    let out = (0..plane)
        .map(|p| {
            let kl: f64 = (0..k)
                .map(|c| {
                    let (a, b) = (t.data()[c * plane + p], s.data()[c * plane + p]);
                    if a > 0.0 {
                        a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln())
                    } else {
                        0.0
                    }
                })
                .sum();
            tau * tau * kl.max(0.0)
        })
        .collect();
    TensorF::new(vec![h, w], out)
}

/// Result of a masked mean over admitted pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    pub active_count: usize,
}

impl MaskedLoss {
    pub fn no_active_pixels(&self) -> bool {
        self.active_count == 0
    }
}

/// Mean of `w_bu ⊙ w_pu ⊙ sd` over admitted pixels; 0 when none are admitted.
pub fn pcd_loss(sd: &TensorF, mask: &CurriculumMask) -> Result<MaskedLoss> {
    if sd.shape() != mask.w_pu.shape() || sd.shape() != mask.w_bu.shape() {
        return Err(Error::Shape(format!(
            "loss {:?} vs masks {:?}/{:?}",
            sd.shape(),
            mask.w_pu.shape(),
            mask.w_bu.shape()
        )));
    }
    let w = mask.combined();
    let active_count = w.iter().filter(|&&v| v > 0.0).count();
    if active_count == 0 {
        return Ok(MaskedLoss {
            value: 0.0,
            active_count,
        });
    }
    let sum: f64 = sd.data().iter().zip(&w).map(|(l, w)| l * w).sum();
    Ok(MaskedLoss {
        value: sum / active_count as f64,
        active_count,
    })
}

/// Weighted CE + KL objective evaluated from logits, with the analytic
/// gradient of the (masked, summed) per-pixel loss w.r.t. student logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Distillation temperature.
    pub tau: f64,
    /// Weight on the KL term; 1 gives the plain `CE + KL` sum.
    pub alpha: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            tau: 1.0,
            alpha: 1.0,
        }
    }
}

/// Loss maps together with `d(Σ_p w_p · sd_p) / d student_logits`.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub maps: LossMaps,
    /// Sum of `w_p · sd_p` over pixels.
    pub masked_sum: f64,
    pub grad: TensorF,
}

impl Objective {
    /// `teacher_logits = None` drops the KL term (plain CE training).
    /// `weights = None` admits every pixel.
    pub fn evaluate(
        &self,
        student_logits: &TensorF,
        teacher_logits: Option<&TensorF>,
        labels: &LabelMap,
        weights: Option<&[f64]>,
    ) -> Result<LossAndGrad> {
        check_tau(self.tau)?;
        let (k, h, w) = student_logits.chw()?;
        check_labels(k, h, w, labels)?;
        if let Some(t) = teacher_logits {
            if t.shape() != student_logits.shape() {
                return Err(Error::Shape(format!(
                    "teacher {:?} vs student {:?}",
                    t.shape(),
                    student_logits.shape()
                )));
            }
        }
        let plane = h * w;
        if weights.is_some_and(|ws| ws.len() != plane) {
            return Err(Error::Shape("weight map size differs from image".into()));
        }
        let z = student_logits.data();
        let mut ce = vec![0.0; plane];
        let mut kl = vec![0.0; plane];
        let mut sd = vec![0.0; plane];
        let mut pcd = vec![0.0; plane];
        let mut grad = vec![0.0; k * plane];
        let mut p = vec![0.0; k];
        let mut qs = vec![0.0; k];
        let mut qt = vec![0.0; k];
        let mut active_count = 0;
        let mut masked_sum = 0.0;
        let tau = self.tau;
        for px in 0..plane {
            let wgt = weights.map_or(1.0, |ws| ws[px]);
            softmax_pixel(z, plane, px, 1.0, &mut p);
            let y = labels.labels()[px] as usize;
            ce[px] = -p[y].max(PROB_FLOOR).ln();
            if let Some(t) = teacher_logits {
                softmax_pixel(z, plane, px, tau, &mut qs);
                softmax_pixel(t.data(), plane, px, tau, &mut qt);
                let mut acc = 0.0;
                for c in 0..k {
                    if qt[c] > 0.0 {
                        acc += qt[c] * (qt[c].max(PROB_FLOOR).ln() - qs[c].max(PROB_FLOOR).ln());
                    }
                }
                kl[px] = tau * tau * acc.max(0.0);
            }
            sd[px] = ce[px] + self.alpha * kl[px];
            pcd[px] = wgt * sd[px];
            if wgt > 0.0 {
                active_count += 1;
                masked_sum += pcd[px];
                for c in 0..k {
                    let mut g = p[c] - f64::from(u8::from(c == y));
                    if teacher_logits.is_some() {
                        g += self.alpha * tau * (qs[c] - qt[c]);
                    }
                    grad[c * plane + px] = wgt * g;
                }
            }
        }
        let t = |v| TensorF::new(vec![h, w], v);
        Ok(LossAndGrad {
            maps: LossMaps {
                ce: t(ce)?,
                kl: t(kl)?,
                sd: t(sd)?,
                pcd: t(pcd)?,
                active_count,
            },
            masked_sum,
            grad: TensorF::new(vec![k, h, w], grad)?,
        })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "distillation temperature must be positive, got {tau}"
        )))
    }
}

fn check_labels(k: usize, h: usize, w: usize, labels: &LabelMap) -> Result<()> {
    if (h, w) != (labels.height(), labels.width()) || labels.classes() != k {
        return Err(Error::Shape(format!(
            "[{k},{h},{w}] map vs {}x{} labels with {} classes",
            labels.height(),
            labels.width(),
            labels.classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::softmax_channels;

    fn probs(k: usize, vals: &[f64]) -> TensorF {
        TensorF::new(vec![k, 1, vals.len() / k], vals.to_vec()).unwrap()
    }

    #[test]
    fn ce_examples() {
        let l = LabelMap::new(1, 1, 2, vec![0]).unwrap();
        assert_eq!(pixel_ce(&probs(2, &[1.0, 0.0]), &l).unwrap().data(), &[0.0]);
        let e = (-1f64).exp();
        assert!((pixel_ce(&probs(2, &[e, 1.0 - e]), &l).unwrap().data()[0] - 1.0).abs() < 1e-12);
        assert!(
            (pixel_ce(&probs(2, &[0.5, 0.5]), &l).unwrap().data()[0] - 2f64.ln()).abs() < 1e-12
        );
        assert!(pixel_ce(&probs(2, &[0.0, 1.0]), &l).unwrap().data()[0].is_finite());
    }

    #[test]
    fn kl_examples() {
        let p = probs(3, &[0.2, 0.5, 0.3]);
        assert!(pixel_kl(&p, &p, 1.0).unwrap().data()[0].abs() < 1e-15);
        assert!(pixel_kl(&p, &p, 3.0).unwrap().data()[0].abs() < 1e-12);
        let d = 1e-6;
        let t = probs(2, &[1.0 - d, d]);
        let s = probs(2, &[0.5, 0.5]);
        let direct = (1.0 - d) * ((1.0 - d) / 0.5f64).ln() + d * (d / 0.5f64).ln();
        let kl = pixel_kl(&t, &s, 1.0).unwrap().data()[0];
        assert!((kl - direct).abs() < 1e-12);
        assert!((kl - 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn kl_at_unit_tau_is_plain_kl() {
        let t = probs(3, &[0.1, 0.6, 0.3]);
        let s = probs(3, &[0.3, 0.3, 0.4]);
        let direct: f64 = [(0.1, 0.3), (0.6, 0.3), (0.3, 0.4)]
            .iter()
            .map(|(a, b): &(f64, f64)| a * (a / b).ln())
            .sum();
        assert!((pixel_kl(&t, &s, 1.0).unwrap().data()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn soften_matches_scaled_logits() {
        let z = TensorF::new(vec![3, 1, 2], vec![1.0, -1.0, 0.5, 2.0, -0.3, 0.0]).unwrap();
        let a = soften(&softmax_channels(&z, 1.0), 2.5).unwrap();
        let b = softmax_channels(&z, 2.5);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_mean_examples() {
        let sd = TensorF::new(vec![1, 2], vec![2.0, 4.0]).unwrap();
        let ones = CurriculumMask::all_ones(1, 2);
        assert_eq!(pcd_loss(&sd, &ones).unwrap().value, 3.0);
        let zeros = CurriculumMask {
            w_pu: TensorF::zeros(vec![1, 2]),
            w_bu: TensorF::filled(vec![1, 2], 1.0),
        };
        let r = pcd_loss(&sd, &zeros).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.no_active_pixels());
        let half = CurriculumMask {
            w_pu: TensorF::new(vec![1, 2], vec![1.0, 0.0]).unwrap(),
            w_bu: TensorF::filled(vec![1, 2], 1.0),
        };
        assert_eq!(pcd_loss(&sd, &half).unwrap().value, 2.0);
        assert!(pcd_loss(&sd, &CurriculumMask::all_ones(2, 1)).is_err());
    }

    #[test]
    fn objective_matches_standalone_maps() {
        let mut r = Rng::new(8);
        let zs = TensorF::new(vec![3, 4, 4], (0..48).map(|_| 2.0 * r.normal()).collect()).unwrap();
        let zt = TensorF::new(vec![3, 4, 4], (0..48).map(|_| 2.0 * r.normal()).collect()).unwrap();
        let l = LabelMap::new(4, 4, 3, (0..16).map(|_| r.below(3) as u8).collect()).unwrap();
        let obj = Objective {
            tau: 2.0,
            alpha: 1.0,
        };
        let out = obj.evaluate(&zs, Some(&zt), &l, None).unwrap();
        let ps = softmax_channels(&zs, 1.0);
        let pt = softmax_channels(&zt, 1.0);
        let ce = pixel_ce(&ps, &l).unwrap();
        let kl = pixel_kl(&pt, &ps, 2.0).unwrap();
        for i in 0..16 {
            assert!((out.maps.ce.data()[i] - ce.data()[i]).abs() < 1e-12);
            assert!((out.maps.kl.data()[i] - kl.data()[i]).abs() < 1e-9);
            assert_eq!(
                out.maps.sd.data()[i],
                out.maps.ce.data()[i] + out.maps.kl.data()[i]
            );
            assert!(out.maps.kl.data()[i] >= 0.0 && out.maps.ce.data()[i] >= 0.0);
        }
        assert_eq!(out.maps.active_count, 16);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut r = Rng::new(21);
        let zs = TensorF::new(vec![3, 2, 3], (0..18).map(|_| r.normal()).collect()).unwrap();
        let zt = TensorF::new(vec![3, 2, 3], (0..18).map(|_| r.normal()).collect()).unwrap();
        let l = LabelMap::new(2, 3, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let w = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        for obj in [
            Objective {
                tau: 1.0,
                alpha: 1.0,
            },
            Objective {
                tau: 3.0,
                alpha: 0.5,
            },
        ] {
            let g = obj.evaluate(&zs, Some(&zt), &l, Some(&w)).unwrap().grad;
            for i in 0..18 {
                let h = 1e-5;
                let mut plus = zs.clone();
                plus.data_mut()[i] += h;
                let mut minus = zs.clone();
                minus.data_mut()[i] -= h;
                let f = |z: &TensorF| obj.evaluate(z, Some(&zt), &l, Some(&w)).unwrap().masked_sum;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!(
                    (fd - g.data()[i]).abs() < 1e-7,
                    "{i}: {fd} vs {}",
                    g.data()[i]
                );
                if w[i % 6] == 0.0 {
                    assert_eq!(g.data()[i], 0.0);
                }
            }
        }
    }
}
