//! Fill-reducing orderings for the sparse Cholesky factorisation.

/// Geometric nested dissection.
///
/// `adjacency[i]` lists the neighbours of vertex `i`; `coords[i]` is its
/// position. Vertices listed in `last` (e.g. electrode potentials that couple
/// to the whole boundary) are excluded from the recursion and appended at the
/// end in the given order. Returns the permutation `perm[new] = old`.
pub fn nested_dissection(adjacency: &[Vec<usize>], coords: &[[f64; 2]], last: &[usize]) -> Vec<usize> {
    let n = adjacency.len();
    assert_eq!(coords.len(), n);
    let mut excluded = vec![false; n];
    for &v in last {
        excluded[v] = true;
    }
    let vertices: Vec<usize> = (0..n).filter(|&v| !excluded[v]).collect();
    let mut perm = Vec::with_capacity(n);
    let mut side = vec![0u8; n];
    dissect(adjacency, coords, vertices, &mut side, &mut perm);
    perm.extend_from_slice(last);
    debug_assert_eq!(perm.len(), n);
    perm
}

const LEAF: usize = 48;

fn dissect(adjacency: &[Vec<usize>], coords: &[[f64; 2]], mut verts: Vec<usize>, side: &mut [u8], out: &mut Vec<usize>) {
    if verts.len() <= LEAF {
        out.extend(verts);
        return;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &v in &verts {
        for d in 0..2 {
            lo[d] = lo[d].min(coords[v][d]);
            hi[d] = hi[d].max(coords[v][d]);
        }
    }
    let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
    verts.sort_by(|&a, &b| {
        coords[a][axis]
            .partial_cmp(&coords[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = verts.len() / 2;
    // side: 1 = left, 2 = right, 0 = outside this sub-problem
    for (k, &v) in verts.iter().enumerate() {
        side[v] = if k < mid { 1 } else { 2 };
    }
    let mut left = Vec::with_capacity(mid);
    let mut right = Vec::with_capacity(verts.len() - mid);
    let mut sep = Vec::new();
    for &v in &verts[..mid] {
        if adjacency[v].iter().any(|&w| side[w] == 2) {
            sep.push(v);
        } else {
            left.push(v);
        }
    }
    right.extend_from_slice(&verts[mid..]);
    for &v in &verts {
        side[v] = 0;
    }
    if left.is_empty() || right.is_empty() {
        out.extend(verts);
        return;
    }
    dissect(adjacency, coords, left, side, out);
    dissect(adjacency, coords, right, side, out);
    out.extend(sep);
}

/// Inverse of a permutation given as `perm[new] = old`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn is_a_permutation() {
        let n = 400;
        let side = 20;
        let coords: Vec<[f64; 2]> = (0..n).map(|i| [(i % side) as f64, (i / side) as f64]).collect();
        let adjacency: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let (x, y) = (i % side, i / side);
                let mut nb = Vec::new();
                if x > 0 {
                    nb.push(i - 1);
                }
                if x + 1 < side {
                    nb.push(i + 1);
                }
                if y > 0 {
                    nb.push(i - side);
                }
                if y + 1 < side {
                    nb.push(i + side);
                }
                nb
            })
            .collect();
        let perm = nested_dissection(&adjacency, &coords, &[7, 3]);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        assert_eq!(&perm[n - 2..], &[7, 3]);
        let inv = invert(&perm);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(inv[old], new);
        }
    }
}
