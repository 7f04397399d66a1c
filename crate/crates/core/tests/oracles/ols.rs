/// Slope and intercept from the 2x2 normal equations
/// `[n, Σx; Σx, Σx²] · [a; b] = [Σy; Σxy]`, solved by Cramer's rule.
pub fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = n * sxx - sx * sx;
    let a = (sy * sxx - sx * sxy) / det;
    let b = (n * sxy - sx * sy) / det;
    (b, a)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
