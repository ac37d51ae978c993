use crate::data::WindowBatch;
use crate::server::ReprMatrix;

use super::OrchestratorError;

/// One representation vector per window, taken at the window's last input
/// time; row-major `windows × dim`.
pub fn align_representations(matrix: &ReprMatrix, windows: &WindowBatch) -> Result<Vec<f64>, OrchestratorError> {
    let d = matrix.dim;
    let mut out = Vec::with_capacity(windows.len() * d);
    for i in 0..windows.len() {
        let t = windows.end_index(i);
        if !matrix.covers(t) {
            return Err(OrchestratorError::Alignment {
                window: i,
                time: t,
                start: matrix.start,
                end: matrix.start + matrix.len,
            });
        }
        let k = t - matrix.start;
        out.extend((0..d).map(|c| matrix.values[c * matrix.len + k]));
    }
    Ok(out)
}
