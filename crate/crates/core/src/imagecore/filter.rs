use super::image::{GridGeom, Image2D};

/// Normalized Gaussian taps truncated at 4 sigma (sigma in pixels).
pub(crate) fn gaussian_kernel(sigma_px: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_px).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma_px * sigma_px)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn convolve_rows(geom: GridGeom, src: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let w = geom.width as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..geom.height {
        let row = &src[y * geom.width..(y + 1) * geom.width];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let xi = (x + t as isize - r).clamp(0, w - 1) as usize;
                acc += kv * row[xi];
            }
            out[y * geom.width + x as usize] = acc;
        }
    }
    out
}

fn convolve_cols(geom: GridGeom, src: &[f64], kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let h = geom.height as isize;
    let w = geom.width;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let dst = &mut out[y as usize * w..(y as usize + 1) * w];
        for (t, &kv) in kernel.iter().enumerate() {
            let yi = (y + t as isize - r).clamp(0, h - 1) as usize;
            let row = &src[yi * w..(yi + 1) * w];
            for (d, &s) in dst.iter_mut().zip(row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Separable Gaussian smoothing with `sigma_mm` in physical units. A
/// non-positive sigma returns a copy.
pub fn gaussian_blur(img: &Image2D, sigma_mm: f64) -> Image2D {
    if sigma_mm <= 0.0 {
        return img.clone();
    }
    let geom = img.geom();
    let k = gaussian_kernel(sigma_mm / geom.spacing);
    let tmp = convolve_rows(geom, img.data(), &k);
    Image2D::from_parts_unchecked(geom, convolve_cols(geom, &tmp, &k))
}

pub(crate) fn blur_slice(geom: GridGeom, data: &[f64], sigma_mm: f64) -> Vec<f64> {
    if sigma_mm <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma_mm / geom.spacing);
    let tmp = convolve_rows(geom, data, &k);
    convolve_cols(geom, &tmp, &k)
}

/// Central difference along x in intensity per mm.
pub fn central_difference_x(img: &Image2D) -> Image2D {
    let geom = img.geom();
    let scale = 0.5 / geom.spacing;
    let mut out = Vec::with_capacity(geom.len());
    for y in 0..geom.height as isize {
        for x in 0..geom.width as isize {
            out.push((img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y)) * scale);
        }
    }
    Image2D::from_parts_unchecked(geom, out)
}

/// Central difference along y in intensity per mm.
pub fn central_difference_y(img: &Image2D) -> Image2D {
    let geom = img.geom();
    let scale = 0.5 / geom.spacing;
    let mut out = Vec::with_capacity(geom.len());
    for y in 0..geom.height as isize {
        for x in 0..geom.width as isize {
            out.push((img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1)) * scale);
        }
    }
    Image2D::from_parts_unchecked(geom, out)
}

/// Smooths with a one-pixel Gaussian and keeps every other pixel. Output
/// pixel `i` sits at input pixel `2i`, so physical coordinates are preserved
/// with doubled spacing.
pub fn downsample2(img: &Image2D) -> Image2D {
    let geom = img.geom();
    let blurred = gaussian_blur(img, geom.spacing);
    let w = geom.width.div_ceil(2).max(2);
    let h = geom.height.div_ceil(2).max(2);
    let out_geom = GridGeom {
        width: w,
        height: h,
        spacing: geom.spacing * 2.0,
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let sx = (2 * x).min(geom.width - 1);
            let sy = (2 * y).min(geom.height - 1);
            data.push(blurred.get(sx, sy));
        }
    }
    Image2D::from_parts_unchecked(out_geom, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 17);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let g = GridGeom::new(9, 7, 1.5).unwrap();
        let img = Image2D::filled(g, 4.25);
        let b = gaussian_blur(&img, 3.0);
        assert!(b.data().iter().all(|&v| (v - 4.25).abs() < 1e-12));
    }

    #[test]
    fn differences_of_ramp() {
        let g = GridGeom::new(8, 8, 2.0).unwrap();
        let img = Image2D::from_fn(g, |x, y| 5.0 * x as f64 - y as f64).unwrap();
        let dx = central_difference_x(&img);
        let dy = central_difference_y(&img);
        assert!((dx.get(3, 4) - 2.5).abs() < 1e-12);
        assert!((dy.get(3, 4) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn downsample_keeps_physical_positions() {
        let g = GridGeom::new(9, 8, 1.0).unwrap();
        let img = Image2D::from_fn(g, |x, _| x as f64).unwrap();
        let d = downsample2(&img);
        assert_eq!((d.width(), d.height()), (5, 4));
        assert_eq!(d.spacing(), 2.0);
        // a linear ramp survives symmetric smoothing away from the clamped edge
        assert!((d.get(2, 1) - 4.0).abs() < 1e-9);
    }
}
