//! Composite Simpson rules on uniform grids.

/// Node positions and weights of the composite Simpson rule on `[a, b]`
/// with `panels` panels (`2·panels + 1` nodes).
pub fn simpson_nodes(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = panels.max(1);
    let intervals = 2 * panels;
    let h = (b - a) / intervals as f64;
    let nodes = (0..=intervals).map(|i| a + h * i as f64).collect();
    let weights = (0..=intervals)
        .map(|i| {
            let w = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    (nodes, weights)
}

pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = simpson_nodes(a, b, panels);
    nodes.iter().zip(&weights).map(|(&x, &w)| w * f(x)).sum()
}

/// Tensor-product Simpson rule on `[0,1]²`.
pub fn simpson_unit_square<F: FnMut(f64, f64) -> f64>(mut f: F, panels: usize) -> f64 {
    let (nodes, weights) = simpson_nodes(0.0, 1.0, panels);
    let mut total = 0.0;
    for (&u, &wu) in nodes.iter().zip(&weights) {
        for (&v, &wv) in nodes.iter().zip(&weights) {
            total += wu * wv * f(u, v);
        }
    }
    total
}
