use std::path::Path;

use super::binary::write_file;
use crate::error::{Error, Result};
use crate::image::Image;

/// Encodes a 3-channel image with values in `[0,1]` as binary PPM (P6).
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Validation(format!(
            "PPM export needs 3 channels, got {}",
            img.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    write_file(path, &encode_ppm(img)?)
}

/// Projects a `d`-channel feature map onto its top three principal components
/// and rescales each to `[0,1]` for visualization.
pub fn feature_pca_image(features: &Image) -> Image {
    let n = features.num_pixels();
    let d = features.channels;
    let mut out = Image::zeros(features.width, features.height, 3);
    if n == 0 || d == 0 {
        return out;
    }
    let mut mean = vec![0.0; d];
    for p in 0..n {
        for (m, v) in mean.iter_mut().zip(features.pixel(p)) {
            *m += v / n as f64;
        }
    }
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for p in 0..n {
        let x: Vec<f64> = features
            .pixel(p)
            .iter()
            .zip(&mean)
            .map(|(v, m)| v - m)
            .collect();
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += x[i] * x[j];
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for c in 0..3.min(d) {
        let axis = eig.eigenvectors.column(order[c]);
        let proj: Vec<f64> = (0..n)
            .map(|p| {
                features
                    .pixel(p)
                    .iter()
                    .zip(&mean)
                    .zip(axis.iter())
                    .map(|((v, m), a)| (v - m) * a)
                    .sum()
            })
            .collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for p in 0..n {
            out.pixel_mut(p)[c] = (proj[p] - lo) / span;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let img = Image::filled(4, 2, 3, 0.5);
        let bytes = encode_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(bytes.len(), b"P6\n4 2\n255\n".len() + 24);
    }

    #[test]
    fn pca_in_unit_range() {
        let data: Vec<f64> = (0..16 * 5).map(|i| ((i * 37) % 11) as f64).collect();
        let img = feature_pca_image(&Image::from_vec(4, 4, 5, data));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
