/// Directed k-nearest-neighbor edges `i → j` over points. Each node gets
/// its `min(k, n − 1)` nearest other nodes by Euclidean distance, distance
/// ties going to the lower index. Edges are grouped by source in ascending
/// order, nearest neighbor first.
pub fn knn_graph(points: &[[f64; 3]], k: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let per_node = k.min(n.saturating_sub(1));
    let mut edges = Vec::with_capacity(n * per_node);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        cand.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| {
            let d2 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
            (d2, j)
        }));
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(cand.iter().take(per_node).map(|&(_, j)| (i, j)));
    }
    edges
}
