use crate::{Error, Result};

/// Mean of each channel of a `channels × height × width` feature map
/// (row-major, channel-major), the activation of a convolutional neuron.
pub fn channel_mean_activation(feature_map: &[f64], channels: usize, height: usize, width: usize) -> Result<Vec<f64>> {
    let cells = height * width;
    if cells == 0 {
        return Err(Error::InvalidInput("feature map has an empty spatial grid".into()));
    }
    if feature_map.len() != channels * cells {
        return Err(Error::shape("feature map", channels * cells, feature_map.len()));
    }
    Ok(feature_map
        .chunks_exact(cells)
        .map(|c| c.iter().sum::<f64>() / cells as f64)
        .collect())
}
