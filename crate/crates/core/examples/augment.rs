//! The seven augmentations of one image, with the truncation error of each
//! SVD variant against the discarded singular values.

use cellnas::datapipe::{augment_all, low_rank_approx, synthetic_stripes, SVD_RATIOS};

fn main() -> cellnas::Result<()> {
    let img = synthetic_stripes(1, 40, 7).remove(0);
    for v in augment_all(&img)? {
        println!("{:<8} {}x{}  mean {:.1}", v.provenance.name(), v.height, v.width, v.mean());
    }
    let min = img.height.min(img.width);
    for (ratio, prov) in SVD_RATIOS {
        let k = (ratio * min as f64 - 1e-9).ceil() as usize;
        let (recon, sigma) = low_rank_approx(&img, k);
        let err: f64 = img.pixels.iter().zip(&recon).map(|(&p, q)| (p as f64 - q).powi(2)).sum::<f64>().sqrt();
        let tail: f64 = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        println!("{prov}: rank {k}/{min}, error {err:.4}, discarded spectrum {tail:.4}");
    }
    Ok(())
}
