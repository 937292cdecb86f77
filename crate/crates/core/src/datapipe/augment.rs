use nalgebra::DMatrix;

use super::{Provenance, RoiImage};
use crate::error::{Error, Result};

/// Singular-value ratios of the three SVD variants, with their provenance tags.
pub const SVD_RATIOS: [(f64, Provenance); 3] =
    [(0.45, Provenance::Svd45), (0.35, Provenance::Svd35), (0.25, Provenance::Svd25)];

pub fn mirror(img: &RoiImage) -> RoiImage {
    let mut out = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks_exact(img.width) {
        out.extend(row.iter().rev());
    }
    img.derive(img.height, img.width, out, Provenance::Mirror)
}

/// Exact clockwise rotation by 90, 180 or 270 degrees.
pub fn rotate(img: &RoiImage, degrees: u32) -> Result<RoiImage> {
    let (h, w) = (img.height, img.width);
    let (oh, ow, prov) = match degrees {
        90 => (w, h, Provenance::Rot90),
        180 => (h, w, Provenance::Rot180),
        270 => (w, h, Provenance::Rot270),
        d => return Err(Error::InvalidArgument(format!("rotation must be 90, 180 or 270 degrees, got {d}"))),
    };
    let mut out = vec![0u8; h * w];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = match degrees {
                90 => img.at(h - 1 - c, r),
                180 => img.at(h - 1 - r, w - 1 - c),
                _ => img.at(c, w - 1 - r),
            };
        }
    }
    Ok(img.derive(oh, ow, out, prov))
}

/// Rank-`k` reconstruction of the pixel grid in real arithmetic, and the
/// singular values in descending order.
pub fn low_rank_approx(img: &RoiImage, k: usize) -> (Vec<f64>, Vec<f64>) {
    let a = DMatrix::from_row_iterator(img.height, img.width, img.pixels.iter().map(|&p| p as f64));
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.as_ref().expect("u requested"), svd.v_t.as_ref().expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut recon = DMatrix::<f64>::zeros(img.height, img.width);
    for &i in order.iter().take(k) {
        recon += svd.singular_values[i] * u.column(i) * vt.row(i);
    }
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut out = Vec::with_capacity(img.height * img.width);
    for r in 0..img.height {
        out.extend(recon.row(r).iter());
    }
    (out, sigma)
}

/// Keeps the top `⌈ratio·min(H,W)⌉` singular values, then clamps and rounds.
pub fn svd_truncate(img: &RoiImage, ratio: f64) -> Result<RoiImage> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("SVD ratio must be in (0,1], got {ratio}")));
    }
    let rank = img.height.min(img.width);
    // small epsilon keeps 0.45·20 = 9 from becoming 10 through float noise
    let k = ((ratio * rank as f64) - 1e-9).ceil().max(1.0) as usize;
    let (recon, _) = low_rank_approx(img, k.min(rank));
    // other ratios carry the tag of the nearest standard ratio
    let prov = SVD_RATIOS
        .iter()
        .min_by(|a, b| (a.0 - ratio).abs().total_cmp(&(b.0 - ratio).abs()))
        .map(|p| p.1)
        .expect("non-empty");
    Ok(img.derive(img.height, img.width, quantize(&recon), prov))
}

fn quantize(v: &[f64]) -> Vec<u8> {
    v.iter().map(|x| x.clamp(0.0, 255.0).round() as u8).collect()
}

/// The seven extra images derived from one original, in fixed order.
pub fn augment_all(img: &RoiImage) -> Result<Vec<RoiImage>> {
    if img.provenance != Provenance::Original {
        return Err(Error::InvalidArgument(format!(
            "{} is already augmented ({}); only originals are augmented",
            img.source_id, img.provenance
        )));
    }
    let mut out = vec![mirror(img), rotate(img, 90)?, rotate(img, 180)?, rotate(img, 270)?];
    for (ratio, _) in SVD_RATIOS {
        out.push(svd_truncate(img, ratio)?);
    }
    Ok(out)
}

/// Catmull-Rom (a = −0.5) weights for a sample at fractional offset `t`.
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let k = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
        } else if x < 2.0 {
            A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
        } else {
            0.0
        }
    };
    [k(1.0 + t), k(t), k(1.0 - t), k(2.0 - t)]
}

/// For every output coordinate: the four clamped source indices and weights.
fn taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let x = (d as f64 + 0.5) * scale - 0.5;
            let base = x.floor();
            let w = cubic_weights(x - base);
            let idx = [-1, 0, 1, 2].map(|o| (base as i64 + o).clamp(0, src as i64 - 1) as usize);
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling to `out_h × out_w`.
pub fn resize_to(img: &RoiImage, out_h: usize, out_w: usize) -> RoiImage {
    let (h, w) = (img.height, img.width);
    let cols = taps(w, out_w);
    let rows = taps(h, out_h);
    let mut horiz = vec![0.0f64; h * out_w];
    for r in 0..h {
        for (c, (idx, wt)) in cols.iter().enumerate() {
            horiz[r * out_w + c] = (0..4).map(|i| wt[i] * img.at(r, idx[i]) as f64).sum();
        }
    }
    let mut out = vec![0.0f64; out_h * out_w];
    for (r, (idx, wt)) in rows.iter().enumerate() {
        for c in 0..out_w {
            out[r * out_w + c] = (0..4).map(|i| wt[i] * horiz[idx[i] * out_w + c]).sum();
        }
    }
    img.derive(out_h, out_w, quantize(&out), img.provenance)
}

pub fn resize_bicubic(img: &RoiImage, side: usize) -> RoiImage {
    resize_to(img, side, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Label;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize, px: Vec<u8>) -> RoiImage {
        RoiImage::new(h, w, px, Label::Benign, "t").unwrap()
    }

    fn random(h: usize, w: usize, seed: u64) -> RoiImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid(h, w, (0..h * w).map(|_| rng.random()).collect())
    }

    #[test]
    fn mirror_and_rotation_examples() {
        let g = grid(2, 2, vec![1, 2, 3, 4]);
        assert_eq!(mirror(&g).pixels, [2, 1, 4, 3]);
        assert_eq!(rotate(&g, 180).unwrap().pixels, [4, 3, 2, 1]);
        assert_eq!(rotate(&g, 90).unwrap().pixels, [3, 1, 4, 2]);
        assert!(rotate(&g, 45).is_err());
        let x = random(3, 5, 1);
        assert_eq!(mirror(&mirror(&x)).pixels, x.pixels);
        let r90 = rotate(&x, 90).unwrap();
        assert_eq!((r90.height, r90.width), (5, 3));
        let mut y = x.clone();
        for _ in 0..4 {
            y = rotate(&y, 90).unwrap();
        }
        assert_eq!(y.pixels, x.pixels);
        assert_eq!(rotate(&x, 180).unwrap().pixels, rotate(&r90, 90).unwrap().pixels);
        assert_eq!(rotate(&x, 270).unwrap().pixels, rotate(&rotate(&x, 180).unwrap(), 90).unwrap().pixels);
        assert_eq!(mirror(&x).histogram(), x.histogram());
    }

    #[test]
    fn svd_rank_one_and_full() {
        let u = [3.0, 5.0, 7.0, 2.0, 9.0];
        let v = [1.0, 2.0, 4.0, 3.0];
        let px = u.iter().flat_map(|a| v.iter().map(move |b| (a * b) as u8)).collect();
        let g = grid(5, 4, px);
        let (recon, _) = low_rank_approx(&g, 1);
        for (r, p) in recon.iter().zip(&g.pixels) {
            assert!((r - *p as f64).abs() < 1e-9);
        }
        assert_eq!(svd_truncate(&g, 0.25).unwrap().pixels, g.pixels);
        let x = random(7, 9, 4);
        assert_eq!(svd_truncate(&x, 1.0).unwrap().pixels, x.pixels);
        assert!(svd_truncate(&x, 0.0).is_err());
        assert!(svd_truncate(&x, 1.5).is_err());
    }

    #[test]
    fn svd_error_matches_discarded_spectrum() {
        let x = random(8, 8, 7);
        let (recon, _) = low_rank_approx(&x, 4);
        let err: f64 = recon.iter().zip(&x.pixels).map(|(r, p)| (r - *p as f64).powi(2)).sum();
        // independent route: eigenvalues of AᵀA are the squared singular values
        let a = DMatrix::from_row_iterator(8, 8, x.pixels.iter().map(|&p| p as f64));
        let mut eig: Vec<f64> = SymmetricEigen::new(a.transpose() * &a).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = eig[4..].iter().map(|e| e.max(0.0)).sum();
        assert!((err - discarded).abs() / discarded < 1e-9, "{err} vs {discarded}");
    }

    #[test]
    fn augment_all_order() {
        let x = random(6, 6, 2);
        let out = augment_all(&x).unwrap();
        let provs: Vec<_> = out.iter().map(|i| i.provenance).collect();
        use Provenance::*;
        assert_eq!(provs, [Mirror, Rot90, Rot180, Rot270, Svd45, Svd35, Svd25]);
        assert!(out.iter().all(|i| i.label == x.label && i.source_id == x.source_id));
        assert!(augment_all(&out[0]).is_err());
    }

    #[test]
    fn resize_constant_identity_and_checkerboard() {
        let c = grid(37, 23, vec![91; 37 * 23]);
        assert!(resize_bicubic(&c, 100).pixels.iter().all(|&p| p == 91));
        let x = random(100, 100, 3);
        let same = resize_bicubic(&x, 100);
        assert!(same.pixels.iter().zip(&x.pixels).all(|(a, b)| a.abs_diff(*b) <= 1));
        let board = grid(200, 200, (0..200 * 200).map(|i| if ((i / 200) / 2 + (i % 200) / 2) % 2 == 0 { 255 } else { 0 }).collect());
        let small = resize_bicubic(&board, 100);
        assert!((small.mean() - board.mean()).abs() <= 1.0);
    }

    #[test]
    fn catmull_rom_weights_partition_unity() {
        for t in [0.0, 0.1, 0.5, 0.9] {
            assert!((cubic_weights(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weights(0.5), [-0.0625, 0.5625, 0.5625, -0.0625]);
    }
}
