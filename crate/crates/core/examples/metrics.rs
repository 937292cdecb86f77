//! Rates from confusion counts, and the per-fold CSV layout.

use cellnas::trainer::{compute_metrics, metrics_csv};

fn main() -> cellnas::Result<()> {
    // counts consistent with a 262/262 split
    let m = compute_metrics(227, 35, 21, 241)?;
    println!("TNR {:.3}  TPR {:.3}  PR {:.3}  accuracy {:.3}", m.tnr.unwrap(), m.tpr.unwrap(), m.pr.unwrap(), m.acc.unwrap());
    let folds = [compute_metrics(45, 7, 4, 49)?, compute_metrics(10, 0, 0, 0)?];
    print!("{}", metrics_csv(&folds)?);
    Ok(())
}
