use crate::error::{Error, Result};

/// Schroeder energy-decay curve in dB relative to the total energy.
pub fn energy_decay_db(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// RT60 from a least-squares line through the -5 dB to -25 dB part of the
/// decay curve, extrapolated to -60 dB.
pub fn estimate_rt60_samples(h: &[f64], fs: u32) -> Result<f64> {
    if h.iter().all(|v| *v == 0.0) {
        return Err(Error::EmptyRir);
    }
    let edc = energy_decay_db(h);
    let start = edc.iter().position(|&d| d <= -5.0);
    let end = edc.iter().position(|&d| d <= -25.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(Error::Undecayable("decay never reaches -25 dB".into())),
    };
    let min_len = (0.010 * fs as f64).ceil() as usize;
    if end < start + min_len {
        return Err(Error::Undecayable(format!("-5..-25 dB segment is {} samples", end.saturating_sub(start))));
    }
    let n = (end - start) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in edc[start..end].iter().enumerate() {
        let x = i as f64 / fs as f64;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(slope < 0.0) {
        return Err(Error::Undecayable(format!("non-negative decay slope {slope}")));
    }
    Ok(-60.0 / slope)
}
