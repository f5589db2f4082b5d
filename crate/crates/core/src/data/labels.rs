use crate::error::{AstnError, Result};

/// Collapses per-frame annotations into per-second labels: a second is
/// positive iff any of its `sample_rate` frames is.
pub fn label_windows(frame_labels: &[u8], sample_rate: usize) -> Result<Vec<u8>> {
    if sample_rate == 0 {
        return Err(AstnError::Data("sample rate must be positive".into()));
    }
    if frame_labels.len() % sample_rate != 0 {
        return Err(AstnError::Data(format!(
            "{} frame labels is not a whole number of {sample_rate}-frame seconds; truncate first",
            frame_labels.len()
        )));
    }
    Ok(frame_labels
        .chunks(sample_rate)
        .map(|w| u8::from(w.iter().any(|&y| y != 0)))
        .collect())
}
