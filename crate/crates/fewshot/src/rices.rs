//! Retrieval of in-context examples by embedding similarity.

use mmgen_core::linalg::cosine;
use mmgen_core::ImageTensor;
use mmgen_viztok::Encoder;

use crate::error::FewShotError;

/// Mean-pooled encoder embeddings used for retrieval.
pub fn embed_all(encoder: &Encoder<f32>, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, FewShotError> {
    images
        .iter()
        .map(|im| encoder.mean_embedding(im).map_err(FewShotError::from))
        .collect()
}

/// Pool indices of the `k` most similar embeddings to `query`, ordered by
/// ascending similarity so the closest one comes last. Among equal
/// similarities the lower index ranks as more similar.
pub fn rices_select(query: &[f64], pool: &[Vec<f64>], k: usize) -> Result<Vec<usize>, FewShotError> {
    if k > pool.len() {
        return Err(FewShotError::PoolTooSmall { k, pool: pool.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let sims = pool
        .iter()
        .enumerate()
        .map(|(i, p)| cosine(query, p).ok_or(FewShotError::ZeroNorm { index: i }))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.reverse();
    Ok(order)
}
