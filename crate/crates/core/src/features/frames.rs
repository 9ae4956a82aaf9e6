use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Mean of the rows whose `pad_mask` entry is `false`.
pub fn frame_aggregate<S: Scalar>(frames: &Matrix<S>, pad_mask: &[bool]) -> Result<Vec<S>> {
    if frames.rows() == 0 {
        return Err(Error::Input("frame matrix has no rows".into()));
    }
    if pad_mask.len() != frames.rows() {
        return Err(Error::Dimension(format!(
            "pad mask has {} entries for {} frames",
            pad_mask.len(),
            frames.rows()
        )));
    }
    let mut acc = vec![S::zero(); frames.cols()];
    let mut count = 0usize;
    for (r, &padded) in pad_mask.iter().enumerate() {
        if padded {
            continue;
        }
        count += 1;
        for (a, &v) in acc.iter_mut().zip(frames.row(r)) {
            *a += v;
        }
    }
    if count == 0 {
        return Err(Error::Input("every frame is masked as padding".into()));
    }
    let n = S::lit(count as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
