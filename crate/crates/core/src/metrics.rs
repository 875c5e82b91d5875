//! Transient metrics of recorded signals.

/// Time after `disturbance_time` from which `|signal - target| <= band`
/// holds until the end of the record. `None` if the last sample is outside
/// the band. Times before the disturbance are ignored.
pub fn settling_time(times: &[f64], signal: &[f64], target: f64, band: f64, disturbance_time: f64) -> Option<f64> {
    assert_eq!(times.len(), signal.len(), "time and signal lengths differ");
    let start = times.iter().position(|&t| t >= disturbance_time)?;
    let outside = |i: usize| {
        let d = (signal[i] - target).abs();
        d.is_nan() || d > band
    };
    if outside(times.len() - 1) {
        return None;
    }
    match (start..times.len()).rev().find(|&i| outside(i)) {
        None => Some(times[start] - disturbance_time),
        Some(i) => Some(times[i + 1] - disturbance_time),
    }
}

/// `max |signal|` over samples with `window.0 <= t <= window.1`; `None` for
/// an empty window.
pub fn max_deviation(times: &[f64], signal: &[f64], window: (f64, f64)) -> Option<f64> {
    assert_eq!(times.len(), signal.len(), "time and signal lengths differ");
    times
        .iter()
        .zip(signal)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(_, v)| v.abs())
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}
