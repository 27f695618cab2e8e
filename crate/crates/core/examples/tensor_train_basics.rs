//! Entries, inner products and TT-SVD compression of a Chebyshev tensor.
//!
//! cargo run --release --example tensor_train_basics

use chebcal::chebyshev::{build_full_tensor, ChebyshevGrid, Interval};
use chebcal::format::{read_tt, write_tt};
use chebcal::tensor_train::{tt_entry, tt_from_full, tt_inner_product, TtCore, TtTensor};

fn main() -> chebcal::Result<()> {
    // Rank one: the entry is a plain product.
    let x = TtTensor::new(vec![
        TtCore::from_vector(&[1.6, 2.1, -3.2, 8.4])?,
        TtCore::from_vector(&[7.4, -6.1, 9.5])?,
    ])?;
    println!("X(2,3) = {}", tt_entry(&x, &[1, 2])?);
    println!("<X,X> = {:.4}, |X| = {:.4}", tt_inner_product(&x, &x)?, x.frobenius_norm());

    // A smooth 5-d function compresses to low ranks.
    let grid = ChebyshevGrid::uniform(&[Interval::new(-1.0, 1.0)?; 5], 8)?;
    let f = |x: &[f64]| 1.0 / (2.0 + x.iter().sum::<f64>() * 0.3) + (x[0] * x[4]).cos();
    let full = build_full_tensor(&grid, f)?;
    for tol in [1e-2, 1e-6, 1e-10] {
        let tt = tt_from_full(&full, tol)?;
        let p = [0.31, -0.52, 0.77, 0.05, -0.9];
        println!(
            "tol {tol:>6.0e}: ranks {:?}, {} of {} values, error at a point {:.2e}",
            tt.ranks(),
            tt.storage_len(),
            full.values().len(),
            (tt.cheb_eval(&p)? - f(&p)).abs()
        );
    }

    let tt = tt_from_full(&full, 1e-10)?;
    let dir = std::env::temp_dir().join("chebcal_tt_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tensor.bin");
    write_tt(&path, &tt)?;
    let back = read_tt(&path)?;
    println!("round trip through {} keeps ranks {:?}", path.display(), back.ranks());
    Ok(())
}
