//! Task metrics: MAE, accuracy and tie-aware ROC-AUC.
//!
//! cargo run --example metrics

use ndarray::arr2;
use sea_core::train::{accuracy, mae, roc_auc};

fn main() -> sea_core::Result<()> {
    println!("MAE {}", mae(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0])?);
    let logits = arr2(&[[2.0, 0.1], [0.3, 0.3], [0.0, 1.5]]);
    println!("accuracy {} (the tied row predicts class 0)", accuracy(&logits, &[0, 0, 1])?);
    let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
    let labels = [false, false, true, true, true];
    println!("ROC-AUC {}", roc_auc(&scores, &labels)?);
    match roc_auc(&[0.2, 0.9], &[true, true]) {
        Err(e) => println!("single-class input: {e}"),
        Ok(v) => println!("unexpected {v}"),
    }
    Ok(())
}
