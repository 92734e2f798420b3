//! Small shared helpers.

use std::io;
use std::path::Path;
use std::process;
use std::time::{SystemTime, UNIX_EPOCH};

/// Tolerance for comparisons on the seconds/frame grid. Boundary times are
/// sums and products of config values like 0.1 and 2.0, so errors stay many
/// orders of magnitude below this.
pub const TIME_EPS: f64 = 1e-9;

/// Number of frames covering `duration_s` at hop `hop_s`: the real-valued
/// ceiling of `duration / hop`, guarded against the quotient landing one ulp
/// above an integer (e.g. 2.0 / 0.1).
pub fn frame_count(duration_s: f64, hop_s: f64) -> usize {
    ((duration_s / hop_s) - TIME_EPS).ceil().max(1.0) as usize
}

/// Index of the frame whose window `[t*hop, (t+1)*hop)` contains time `t_s`,
/// guarded against the quotient landing one ulp below an integer
/// (e.g. 0.3 / 0.1).
pub fn containing_frame(t_s: f64, hop_s: f64) -> usize {
    ((t_s / hop_s) + TIME_EPS).floor().max(0.0) as usize
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(sigmoid(x)) = -softplus(-x).
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Write `contents` to `path` atomically: write a temp file in the same
/// directory, then rename over the target. On failure the target is left
/// untouched and the temp file is removed.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        process::id(),
        nanos
    ));
    let write = std::fs::write(&tmp, contents).and_then(|_| std::fs::rename(&tmp, path));
    if write.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    write
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_handles_exact_and_partial_grids() {
        assert_eq!(frame_count(1.0, 0.1), 10);
        assert_eq!(frame_count(2.0, 0.1), 20); // 2.0/0.1 rounds to exactly 20.0
        assert_eq!(frame_count(2.05, 0.1), 21);
        assert_eq!(frame_count(0.01, 0.1), 1);
    }

    #[test]
    fn containing_frame_is_robust_to_quotient_rounding() {
        assert_eq!(containing_frame(0.3, 0.1), 3); // 0.3/0.1 == 2.999...96
        assert_eq!(containing_frame(3.04, 0.1), 30);
        assert_eq!(containing_frame(3.06, 0.1), 30);
        assert_eq!(containing_frame(3.1, 0.1), 31);
    }

    #[test]
    fn stable_sigmoid_family_agrees_with_naive_forms() {
        for &x in &[-30.0f64, -2.0, -0.1, 0.0, 0.1, 2.0, 30.0] {
            let naive = 1.0 / (1.0 + (-x).exp());
            assert!((sigmoid(x) - naive).abs() < 1e-15);
            assert!((log_sigmoid(x) - naive.ln()).abs() < 1e-12);
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-12);
        }
        // no overflow at extreme logits
        assert!(log_sigmoid(-1e4).is_finite());
        assert_eq!(log_sigmoid(1e4), 0.0);
    }
}
