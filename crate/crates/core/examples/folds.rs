//! Stratified five-fold assignment of 262 + 262 sources.

use cellnas::datapipe::{stratified_folds, Label, RoiImage};

fn main() -> cellnas::Result<()> {
    let mut sources = Vec::new();
    for label in Label::ALL {
        for i in 0..262 {
            sources.push(RoiImage::new(2, 2, vec![0; 4], label, format!("{label}/{i:03}.png"))?);
        }
    }
    let folds = stratified_folds(&sources, 5, 0)?;
    println!("fold totals {:?}", folds.sizes());
    for label in Label::ALL {
        let mut per = [0; 5];
        for s in sources.iter().filter(|s| s.label == label) {
            per[folds.fold_of(&s.source_id).unwrap()] += 1;
        }
        println!("{label:<10} {per:?}");
    }
    Ok(())
}
