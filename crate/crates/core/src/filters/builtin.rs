//! Built-in filters. All use replicate (edge-clamp) padding.

use super::BlackBoxFilter;
use crate::error::{Error, Result};
use crate::image::Image;

/// A square correlation kernel of side `2 * radius + 1`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub radius: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    pub fn nonzero_taps(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    fn normalized(mut self) -> Self {
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= sum);
        self
    }

    /// Correlates `img` with this kernel, skipping zero taps.
    pub fn correlate(&self, img: &Image) -> Result<Image> {
        let r = self.radius as isize;
        let taps: Vec<(isize, isize, f64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .map(|(dx, dy)| (dx, dy, self.weight(dx, dy)))
            .filter(|t| t.2 != 0.0)
            .collect();
        let (w, h) = (img.width(), img.height());
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let acc = taps
                    .iter()
                    .map(|&(dx, dy, k)| k * img.get_clamped(x + dx, y + dy))
                    .sum();
                out.push(acc);
            }
        }
        Image::from_raw(w, h, out, "kernel correlation")
    }
}

/// Separable pass: correlate every row (`horizontal`) or column with `k1`.
fn correlate_1d(src: &[f64], w: usize, h: usize, k1: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (k1.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in k1.iter().enumerate() {
                let d = i as isize - r;
                let v = if horizontal {
                    let sx = (x as isize + d).clamp(0, w as isize - 1) as usize;
                    src[y * w + sx]
                } else {
                    let sy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                    src[sy * w + x]
                };
                acc += k * v;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn separable(src: &[f64], w: usize, h: usize, k1: &[f64]) -> Vec<f64> {
    let tmp = correlate_1d(src, w, h, k1, true);
    correlate_1d(&tmp, w, h, k1, false)
}

fn box_mean(src: &[f64], w: usize, h: usize, window: usize) -> Vec<f64> {
    let k1 = vec![1.0 / window as f64; window];
    separable(src, w, h, &k1)
}

fn gaussian_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_window(window: usize) -> Result<()> {
    if window >= 3 && window % 2 == 1 {
        Ok(())
    } else {
        Err(Error::param(format!("window must be odd and at least 3, got {window}")))
    }
}

/// Gaussian blur with a normalized kernel of radius `ceil(3 sigma)`.
pub fn gaussian_filter(img: &Image, sigma: f64) -> Result<Image> {
    check_positive("sigma", sigma)?;
    let k1 = gaussian_1d(sigma);
    let out = separable(img.pixels(), img.width(), img.height(), &k1);
    Image::from_raw(img.width(), img.height(), out, "gaussian_filter")
}

/// Anti-aliased line kernel of the given length at `theta_deg` degrees
/// (counter-clockwise from the +x axis, image rows growing downward).
///
/// Points are sampled densely along the centred segment of extent
/// `length - 1` and splatted onto the grid with bilinear weights, so a
/// length of one degenerates to the identity kernel.
pub fn motion_kernel(length: f64, theta_deg: f64) -> Result<Kernel> {
    if !(length >= 1.0) || !length.is_finite() {
        return Err(Error::param(format!("motion length must be >= 1, got {length}")));
    }
    if !theta_deg.is_finite() {
        return Err(Error::param("motion angle must be finite"));
    }
    let half = (length - 1.0) / 2.0;
    let radius = half.ceil() as usize + 1;
    let side = 2 * radius + 1;
    let mut weights = vec![0.0; side * side];
    let theta = theta_deg.to_radians();
    let (dir_x, dir_y) = (theta.cos(), -theta.sin());
    let samples = if half > 0.0 {
        ((length - 1.0) * 8.0).ceil() as usize + 1
    } else {
        1
    };
    for i in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            -half + (2.0 * half) * i as f64 / (samples - 1) as f64
        };
        let px = t * dir_x + radius as f64;
        let py = t * dir_y + radius as f64;
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        for (ox, oy, wgt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            if wgt > 0.0 {
                weights[(y0 + oy) * side + x0 + ox] += wgt;
            }
        }
    }
    Ok(Kernel { radius, weights }.normalized())
}

pub fn motion_blur(img: &Image, length: f64, theta_deg: f64) -> Result<Image> {
    motion_kernel(length, theta_deg)?.correlate(img)
}

/// Normalized indicator of the pixels whose centre lies within `radius`.
pub fn disk_kernel(radius: f64) -> Kernel {
    let r = radius.floor().max(0.0) as usize;
    let side = 2 * r + 1;
    let ri = r as isize;
    let weights = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                1.0
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>();
    debug_assert_eq!(weights.len(), side * side);
    Kernel { radius: r, weights }.normalized()
}

pub fn disk_blur(img: &Image, radius: f64) -> Result<Image> {
    if !(radius >= 1.0) || !radius.is_finite() {
        return Err(Error::param(format!("disk radius must be >= 1, got {radius}")));
    }
    disk_kernel(radius).correlate(img)
}

/// Locally adaptive Wiener filter with the usual `wiener2` gain rule.
pub fn adaptive_wiener(img: &Image, window: usize, noise: f64) -> Result<Image> {
    check_window(window)?;
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::param(format!("noise must be non-negative, got {noise}")));
    }
    let (w, h) = (img.width(), img.height());
    let x = img.pixels();
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mean = box_mean(x, w, h, window);
    let mean_sq = box_mean(&sq, w, h, window);
    let out = x
        .iter()
        .zip(mean.iter().zip(&mean_sq))
        .map(|(&v, (&mu, &m2))| {
            let var = (m2 - mu * mu).max(0.0);
            let denom = var.max(noise);
            let gain = if denom == 0.0 {
                1.0
            } else {
                (var - noise).max(0.0) / denom
            };
            // Written so that a unit gain reproduces the input bit for bit.
            v - (1.0 - gain) * (v - mu)
        })
        .collect();
    Image::from_raw(w, h, out, "adaptive_wiener")
}

/// Guided filter using the input as its own guide.
pub fn guided_filter_self(img: &Image, window: usize, eps: f64) -> Result<Image> {
    check_window(window)?;
    check_positive("eps", eps)?;
    let (w, h) = (img.width(), img.height());
    let x = img.pixels();
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let mean = box_mean(x, w, h, window);
    let mean_sq = box_mean(&sq, w, h, window);
    let mut a = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for (&mu, &m2) in mean.iter().zip(&mean_sq) {
        let var = (m2 - mu * mu).max(0.0);
        let ak = var / (var + eps);
        a.push(ak);
        b.push(mu * (1.0 - ak));
    }
    let mean_a = box_mean(&a, w, h, window);
    let mean_b = box_mean(&b, w, h, window);
    let out = x
        .iter()
        .zip(mean_a.iter().zip(&mean_b))
        .map(|(&v, (&ma, &mb))| ma * v + mb)
        .collect();
    Image::from_raw(w, h, out, "guided_filter_self")
}

/// Brute-force bilateral filter; spatial support radius `ceil(3 sigma_s)`.
pub fn bilateral_filter(img: &Image, sigma_s: f64, sigma_r: f64) -> Result<Image> {
    check_positive("sigma_s", sigma_s)?;
    check_positive("sigma_r", sigma_r)?;
    let radius = (3.0 * sigma_s).ceil() as isize;
    let spatial: Vec<(isize, isize, f64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| {
            let d2 = (dx * dx + dy * dy) as f64;
            (dx, dy, (-d2 / (2.0 * sigma_s * sigma_s)).exp())
        })
        .collect();
    let inv_two_r2 = 1.0 / (2.0 * sigma_r * sigma_r);
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let centre = img.get(x as usize, y as usize);
            let (mut num, mut den) = (0.0, 0.0);
            for &(dx, dy, ws) in &spatial {
                let v = img.get_clamped(x + dx, y + dy);
                let d = v - centre;
                let wt = ws * (-d * d * inv_two_r2).exp();
                num += wt * v;
                den += wt;
            }
            out.push(num / den);
        }
    }
    Image::from_raw(w, h, out, "bilateral_filter")
}

/// The built-in filters with validated parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    Gaussian { sigma: f64 },
    Motion { length: f64, theta: f64 },
    Disk { radius: f64 },
    Wiener { window: usize, noise: f64 },
    GuidedSelf { window: usize, eps: f64 },
    Bilateral { sigma_s: f64, sigma_r: f64 },
}

impl BlackBoxFilter for Builtin {
    fn apply(&self, img: &Image) -> Result<Image> {
        match *self {
            Builtin::Gaussian { sigma } => gaussian_filter(img, sigma),
            Builtin::Motion { length, theta } => motion_blur(img, length, theta),
            Builtin::Disk { radius } => disk_blur(img, radius),
            Builtin::Wiener { window, noise } => adaptive_wiener(img, window, noise),
            Builtin::GuidedSelf { window, eps } => guided_filter_self(img, window, eps),
            Builtin::Bilateral { sigma_s, sigma_r } => bilateral_filter(img, sigma_s, sigma_r),
        }
    }

    fn label(&self) -> String {
        match *self {
            Builtin::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            Builtin::Motion { length, theta } => format!("motion(length={length},theta={theta})"),
            Builtin::Disk { radius } => format!("disk(radius={radius})"),
            Builtin::Wiener { window, noise } => format!("wiener(window={window},noise={noise})"),
            Builtin::GuidedSelf { window, eps } => format!("guided_self(window={window},eps={eps})"),
            Builtin::Bilateral { sigma_s, sigma_r } => {
                format!("bilateral(sigma_s={sigma_s},sigma_r={sigma_r})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f64, y as f64);
            0.5 + 0.3 * (fx * 0.37).sin() * (fy * 0.21).cos() + if x > w / 2 { 0.15 } else { -0.15 }
        })
        .unwrap()
    }

    fn all_filters() -> Vec<Builtin> {
        vec![
            Builtin::Gaussian { sigma: 2.0 },
            Builtin::Motion {
                length: 7.0,
                theta: 30.0,
            },
            Builtin::Disk { radius: 3.0 },
            Builtin::Wiener { window: 5, noise: 0.1 },
            Builtin::GuidedSelf { window: 5, eps: 0.1 },
            Builtin::Bilateral {
                sigma_s: 1.5,
                sigma_r: 0.05,
            },
        ]
    }

    #[test]
    fn every_filter_preserves_constants() {
        for f in all_filters() {
            let c = Image::constant(17, 13, 0.37);
            let out = f.apply(&c).unwrap();
            assert!(out.max_abs_diff(&c).unwrap() < 1e-12, "{}", f.label());
        }
    }

    #[test]
    fn every_filter_is_deterministic() {
        let img = textured(20, 16);
        for f in all_filters() {
            assert_eq!(f.apply(&img).unwrap(), f.apply(&img).unwrap());
        }
    }

    #[test]
    fn gaussian_impulse_response_is_the_kernel() {
        let sigma = 1.5;
        let mut data = vec![0.0; 31 * 31];
        data[15 * 31 + 15] = 1.0;
        let out = gaussian_filter(&Image::new(31, 31, data).unwrap(), sigma).unwrap();
        // Directly evaluated 2-D kernel, normalized over the same support.
        let r = (3.0 * sigma).ceil() as i32;
        let raw = |dx: i32, dy: i32| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
        let total: f64 = (-r..=r).flat_map(|y| (-r..=r).map(move |x| raw(x, y))).sum();
        for dy in -r..=r {
            for dx in -r..=r {
                let got = out.get((15 + dx) as usize, (15 + dy) as usize);
                assert!((got - raw(dx, dy) / total).abs() < 1e-14);
            }
        }
        let max = out.pixels().iter().cloned().fold(0.0, f64::max);
        assert_eq!(out.get(15, 15), max);
        assert_eq!(out.get(15 + r as usize + 1, 15), 0.0);
    }

    #[test]
    fn stronger_gaussian_blurs_more() {
        let img = textured(48, 48);
        let p1 = psnr(&img, &gaussian_filter(&img, 1.0).unwrap(), 1.0).unwrap();
        let p5 = psnr(&img, &gaussian_filter(&img, 5.0).unwrap(), 1.0).unwrap();
        assert!(p5 < p1);
        assert!(gaussian_filter(&img, 0.0).is_err());
    }

    #[test]
    fn motion_kernel_properties() {
        let id = motion_kernel(1.0, 45.0).unwrap();
        assert_eq!(id.nonzero_taps(), 1);
        assert_eq!(id.weight(0, 0), 1.0);
        let img = textured(12, 9);
        assert_eq!(motion_blur(&img, 1.0, 45.0).unwrap(), img);

        for (l, th) in [(20.0, 45.0), (9.0, 0.0), (5.5, 117.0)] {
            let k = motion_kernel(l, th).unwrap();
            assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Point symmetric about the centre.
            let r = k.radius as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    assert!((k.weight(dx, dy) - k.weight(-dx, -dy)).abs() < 1e-12);
                }
            }
        }
        // Horizontal integer-length line: taps only on the centre row.
        let k = motion_kernel(5.0, 0.0).unwrap();
        for dy in [-1isize, 1] {
            for dx in -(k.radius as isize)..=k.radius as isize {
                assert_eq!(k.weight(dx, dy), 0.0);
            }
        }
        // 45 degrees goes up and to the right.
        let k = motion_kernel(9.0, 45.0).unwrap();
        assert!(k.weight(3, -3) > 0.0);
        assert!(k.weight(3, 3) < 1e-12);
        assert!(motion_kernel(0.5, 0.0).is_err());
    }

    #[test]
    fn disk_counts_lattice_points() {
        for r in [1.0f64, 2.0, 3.0, 4.5] {
            let ri = r.floor() as i64;
            let brute = (-ri..=ri)
                .flat_map(|y| (-ri..=ri).map(move |x| (x, y)))
                .filter(|(x, y)| ((x * x + y * y) as f64) <= r * r)
                .count();
            assert_eq!(disk_kernel(r).nonzero_taps(), brute);
        }
        assert_eq!(disk_kernel(3.0).nonzero_taps(), 29);
        assert_eq!(disk_kernel(0.5).nonzero_taps(), 1);
        let img = textured(10, 10);
        assert!(disk_kernel(0.5).correlate(&img).unwrap().max_abs_diff(&img).unwrap() == 0.0);
        assert!(disk_blur(&img, 0.5).is_err());
    }

    #[test]
    fn convolutional_filters_preserve_mean_on_periodic_rows() {
        // Periodic pattern measured over whole periods far from the border,
        // where padding plays no role.
        let period = 8usize;
        let (w, h) = (period * 12, period * 12);
        let img = Image::from_fn(w, h, |x, y| {
            0.5 + 0.25 * ((x % period) as f64 / period as f64 * std::f64::consts::TAU).sin()
                + 0.1 * ((y % period) as f64 / period as f64 * std::f64::consts::TAU).cos()
        })
        .unwrap();
        for f in [
            Builtin::Gaussian { sigma: 1.0 },
            Builtin::Motion {
                length: 5.0,
                theta: 45.0,
            },
            Builtin::Disk { radius: 3.0 },
        ] {
            let out = f.apply(&img).unwrap();
            // Interior window of whole periods away from the border.
            let (lo, hi) = (period * 2, period * 10);
            let mean = |im: &Image| {
                let mut s = 0.0;
                for y in lo..hi {
                    for x in lo..hi {
                        s += im.get(x, y);
                    }
                }
                s / ((hi - lo) * (hi - lo)) as f64
            };
            assert!((mean(&out) - mean(&img)).abs() < 1e-10, "{}", f.label());
        }
    }

    #[test]
    fn wiener_hand_computed_patch() {
        // 5x5 image, window 5: check the centre pixel against brute force.
        let vals: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let img = Image::new(5, 5, vals.clone()).unwrap();
        let noise = 0.05;
        let out = adaptive_wiener(&img, 5, noise).unwrap();
        let mu = vals.iter().sum::<f64>() / 25.0;
        let var = vals.iter().map(|v| v * v).sum::<f64>() / 25.0 - mu * mu;
        let gain = (var - noise).max(0.0) / var.max(noise);
        let expect = mu + gain * (vals[12] - mu);
        assert!((out.get(2, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn wiener_without_noise_is_identity() {
        let img = textured(11, 7);
        assert_eq!(adaptive_wiener(&img, 3, 0.0).unwrap(), img);
        assert!(adaptive_wiener(&img, 4, 0.1).is_err());
    }

    #[test]
    fn guided_filter_approaches_input_as_eps_shrinks() {
        let img = Image::from_fn(16, 16, |x, _| if x < 8 { 0.2 } else { 0.8 }).unwrap();
        let devs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&e| guided_filter_self(&img, 5, e).unwrap().max_abs_diff(&img).unwrap())
            .collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        assert!(guided_filter_self(&img, 5, 0.0).is_err());
    }

    #[test]
    fn bilateral_with_huge_range_sigma_is_gaussian() {
        let img = textured(24, 20);
        let b = bilateral_filter(&img, 1.5, 1e6).unwrap();
        let g = gaussian_filter(&img, 1.5).unwrap();
        assert!(b.max_abs_diff(&g).unwrap() < 1e-6);
    }

    #[test]
    fn bilateral_pulls_outlier_towards_background() {
        let mut data = vec![0.0; 9];
        data[4] = 1.0;
        let img = Image::new(3, 3, data).unwrap();
        let (ss, sr) = (1.0 / 3.0, 0.5); // radius 1: a 3x3 window
        let out = bilateral_filter(&img, ss, sr).unwrap();
        let ws = |d2: f64| (-d2 / (2.0 * ss * ss)).exp();
        let wr = (-1.0 / (2.0 * sr * sr)).exp();
        let num = 1.0;
        let den = 1.0 + (4.0 * ws(1.0) + 4.0 * ws(2.0)) * wr;
        assert!((out.get(1, 1) - num / den).abs() < 1e-12);
        assert!(out.get(1, 1) < 1.0);
    }
}
