//! Mutual information: a histogram estimate for reporting and a Parzen
//! (cubic B-spline) estimate with analytic derivatives for optimization.

use crate::imagecore::Image2D;
use crate::{Error, Result};

fn bin_of(v: f64, min: f64, range: f64, bins: usize) -> usize {
    (((v - min) / range * bins as f64) as usize).min(bins - 1)
}

/// Plug-in entropy of `counts` plus the Miller-Madow correction
/// `(occupied bins - 1) / 2N`.
fn entropy_mm(counts: &[u64], n: f64) -> f64 {
    let mut h = 0.0;
    let mut occupied = 0usize;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
            occupied += 1;
        }
    }
    h + (occupied.saturating_sub(1)) as f64 / (2.0 * n)
}

/// Mutual information (nats) of two same-grid images from a joint histogram
/// with `bins` equal-width bins per image over each image's range. Entropies
/// carry the Miller-Madow bias correction, so `MI(A, A) = H(A)` and
/// independent images score close to zero. A constant image gives 0.
pub fn mutual_information(a: &Image2D, b: &Image2D, bins: usize) -> Result<f64> {
    if a.geom() != b.geom() {
        return Err(Error::invalid("mutual information needs images on the same grid"));
    }
    if bins < 2 {
        return Err(Error::invalid("mutual information needs at least 2 bins"));
    }
    let (amin, amax) = a.min_max();
    let (bmin, bmax) = b.min_max();
    if amax == amin || bmax == bmin {
        return Ok(0.0);
    }
    let mut ja = vec![0u64; bins];
    let mut jb = vec![0u64; bins];
    let mut joint = vec![0u64; bins * bins];
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        let i = bin_of(va, amin, amax - amin, bins);
        let j = bin_of(vb, bmin, bmax - bmin, bins);
        ja[i] += 1;
        jb[j] += 1;
        joint[i * bins + j] += 1;
    }
    let n = a.data().len() as f64;
    Ok(entropy_mm(&ja, n) + entropy_mm(&jb, n) - entropy_mm(&joint, n))
}

/// Marginal entropy with the same binning and correction as
/// [`mutual_information`].
pub fn histogram_entropy(a: &Image2D, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid("entropy needs at least 2 bins"));
    }
    let (min, max) = a.min_max();
    if max == min {
        return Ok(0.0);
    }
    let mut h = vec![0u64; bins];
    for &v in a.data() {
        h[bin_of(v, min, max - min, bins)] += 1;
    }
    Ok(entropy_mm(&h, a.data().len() as f64))
}

#[inline]
pub(crate) fn bspline3(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn bspline3_d(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        -2.0 * u + 1.5 * u * a
    } else if a < 2.0 {
        -0.5 * (2.0 - a).powi(2) * u.signum()
    } else {
        0.0
    }
}

/// Parzen-window MI between moving samples (cubic B-spline kernel) and a
/// fixed image (nearest bin). The moving range is fixed at construction so
/// the estimate is differentiable in the samples.
#[derive(Debug, Clone)]
pub struct ParzenMi {
    bins: usize,
    fixed_bins: Vec<usize>,
    moving_min: f64,
    /// Bin units per intensity unit.
    moving_scale: f64,
}

impl ParzenMi {
    pub fn new(fixed: &Image2D, moving_range: (f64, f64), bins: usize) -> Result<Self> {
        if bins < 5 {
            return Err(Error::invalid("Parzen MI needs at least 5 bins"));
        }
        let (fmin, fmax) = fixed.min_max();
        let frange = (fmax - fmin).max(f64::MIN_POSITIVE);
        let fixed_bins = fixed.data().iter().map(|&v| bin_of(v, fmin, frange, bins)).collect();
        let (mmin, mmax) = moving_range;
        let mrange = (mmax - mmin).max(1e-12);
        Ok(ParzenMi {
            bins,
            fixed_bins,
            moving_min: mmin,
            moving_scale: (bins - 3) as f64 / mrange,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.fixed_bins.len()
    }

    #[inline]
    fn coord(&self, v: f64) -> f64 {
        (1.0 + (v - self.moving_min) * self.moving_scale).clamp(1.0, (self.bins - 2) as f64)
    }

    /// MI of `moving` against the fixed image; fills `dmi[x] = dMI/dmoving[x]`
    /// when given.
    pub fn evaluate(&self, moving: &[f64], dmi: Option<&mut [f64]>) -> f64 {
        let k = self.bins;
        let n = moving.len() as f64;
        let mut joint = vec![0.0; k * k];
        for (x, &v) in moving.iter().enumerate() {
            let t = self.coord(v);
            let j = self.fixed_bins[x];
            let i0 = t.floor() as usize;
            for i in i0.saturating_sub(1)..(i0 + 3).min(k) {
                joint[i * k + j] += bspline3(t - i as f64);
            }
        }
        joint.iter_mut().for_each(|p| *p /= n);
        let mut pm = vec![0.0; k];
        let mut pf = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                pm[i] += joint[i * k + j];
                pf[j] += joint[i * k + j];
            }
        }
        let mut mi = 0.0;
        for i in 0..k {
            for j in 0..k {
                let p = joint[i * k + j];
                if p > 0.0 {
                    mi += p * (p / (pm[i] * pf[j])).ln();
                }
            }
        }
        if let Some(g) = dmi {
            for (x, &v) in moving.iter().enumerate() {
                let raw = 1.0 + (v - self.moving_min) * self.moving_scale;
                if raw <= 1.0 || raw >= (k - 2) as f64 {
                    g[x] = 0.0;
                    continue;
                }
                let t = raw;
                let j = self.fixed_bins[x];
                let i0 = t.floor() as usize;
                let mut d = 0.0;
                for i in i0.saturating_sub(1)..(i0 + 3).min(k) {
                    let p = joint[i * k + j];
                    if p > 0.0 {
                        d += bspline3_d(t - i as f64) * (p / pm[i]).ln();
                    }
                }
                g[x] = d * self.moving_scale / n;
            }
        }
        mi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::GridGeom;
    use rand::{Rng, SeedableRng};

    fn noise(seed: u64, w: usize) -> Image2D {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = GridGeom::new(w, w, 1.0).unwrap();
        Image2D::from_fn(g, |_, _| rng.random_range(0.0..255.0)).unwrap()
    }

    #[test]
    fn self_information_is_entropy_and_symmetric() {
        let a = noise(1, 40);
        let b = noise(2, 40);
        let h = histogram_entropy(&a, 64).unwrap();
        assert!((mutual_information(&a, &a, 64).unwrap() - h).abs() < 1e-9);
        let ab = mutual_information(&a, &b, 64).unwrap();
        let ba = mutual_information(&b, &a, 64).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn constant_image_has_zero_information() {
        let a = noise(1, 16);
        let c = Image2D::filled(a.geom(), 3.0);
        assert_eq!(mutual_information(&a, &c, 32).unwrap(), 0.0);
    }

    #[test]
    fn kernel_partition_of_unity() {
        for k in 0..10 {
            let t = 3.0 + k as f64 / 10.0;
            let s: f64 = (0..8).map(|i| bspline3(t - i as f64)).sum();
            let d: f64 = (0..8).map(|i| bspline3_d(t - i as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14 && d.abs() < 1e-14);
        }
    }

    #[test]
    fn parzen_gradient_matches_finite_differences() {
        let f = noise(3, 12);
        let m: Vec<f64> = f.data().iter().map(|v| 255.0 - v * 0.8 + 7.0).collect();
        let mi = ParzenMi::new(&f, (0.0, 255.0), 16).unwrap();
        let mut g = vec![0.0; m.len()];
        mi.evaluate(&m, Some(&mut g));
        let h = 1e-6;
        for x in (0..m.len()).step_by(7) {
            let mut a = m.clone();
            let mut b = m.clone();
            a[x] += h;
            b[x] -= h;
            let fd = (mi.evaluate(&a, None) - mi.evaluate(&b, None)) / (2.0 * h);
            assert!((fd - g[x]).abs() < 1e-7, "{x}: {} vs {fd}", g[x]);
        }
    }
}
