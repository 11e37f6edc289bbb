use super::Image;

/// Maps an out-of-range index back inside `0..n` by mirroring around the
/// edges (`d c b a | a b c d | d c b a`).
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur truncated at 3σ with reflective borders.
///
/// `sigma == 0` returns an unmodified copy.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.as_slice();

    let mut tmp = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + j as isize - radius, w);
                    acc += kv * src[(y * w + sx) * 3 + c] as f64;
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }

    let mut out = vec![0.0f32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + j as isize - radius, h);
                    acc += kv * tmp[(sy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(w, h, out).expect("blur preserves shape and range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_edges() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        // radius wider than the image keeps bouncing
        assert_eq!(reflect(-7, 3), 0);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = Image::filled(7, 5, [0.25, 0.5, 0.75]);
        let out = gaussian_blur(&img, 1.3);
        for (a, b) in img.as_slice().iter().zip(out.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_mean_under_reflection() {
        let img = Image::from_fn(9, 9, |x, y| if (x + y) % 2 == 0 { [1.0; 3] } else { [0.0; 3] });
        let out = gaussian_blur(&img, 1.0);
        let mean_in: f32 = img.as_slice().iter().sum::<f32>() / img.as_slice().len() as f32;
        let mean_out: f32 = out.as_slice().iter().sum::<f32>() / out.as_slice().len() as f32;
        assert!((mean_in - mean_out).abs() < 0.05);
        // checkerboard flattens towards its mean
        assert!(out.as_slice().iter().all(|v| (v - 0.5).abs() < 0.2));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::from_fn(4, 3, |x, y| [x as f32 / 4.0, y as f32 / 3.0, 0.5]);
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }
}
