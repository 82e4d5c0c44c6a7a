//! Locale-free CSV number formatting shared by every table the crate writes.

/// 17 significant digits in scientific notation, which round-trips any `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn row(values: &[f64]) -> String {
    let mut line = values.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}
