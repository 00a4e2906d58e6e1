//! Static kd-tree over a point set, built once and queried read-only.
//!
//! Supports the three query shapes the builders need: k nearest
//! neighbours, all points inside a ball, and single nearest neighbour.

use nalgebra::Point3;

struct Node {
    axis: usize,
    /// Index into `order` of the median point stored at this node.
    point: u32,
    left: i32,
    right: i32,
}

pub struct KdTree {
    points: Vec<Point3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree { points: points.to_vec(), nodes: Vec::with_capacity(points.len()), root: -1 };
        let n = order.len();
        tree.root = tree.build_rec(&mut order, 0, n, 0);
        tree
    }

    fn build_rec(&mut self, order: &mut [u32], lo: usize, hi: usize, depth: usize) -> i32 {
        if lo >= hi {
            return -1;
        }
        let axis = depth % 3;
        let mid = (lo + hi) / 2;
        let slice = &mut order[lo..hi];
        let pts = &self.points;
        slice.select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a as usize][axis].partial_cmp(&pts[b as usize][axis]).unwrap()
        });
        let point = order[mid];
        let id = self.nodes.len() as i32;
        self.nodes.push(Node { axis, point, left: -1, right: -1 });
        let left = self.build_rec(order, lo, mid, depth + 1);
        let right = self.build_rec(order, mid + 1, hi, depth + 1);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points with `|p - centre| <= radius`.
    pub fn within_radius(&self, centre: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_rec(self.root, centre, radius, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, id: i32, centre: &Point3<f64>, radius: f64, out: &mut Vec<usize>) {
        if id < 0 {
            return;
        }
        let node = &self.nodes[id as usize];
        let p = &self.points[node.point as usize];
        if (p - centre).norm() <= radius {
            out.push(node.point as usize);
        }
        let delta = centre[node.axis] - p[node.axis];
        let (near, far) = if delta <= 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.radius_rec(near, centre, radius, out);
        if delta.abs() <= radius {
            self.radius_rec(far, centre, radius, out);
        }
    }

    /// The k nearest neighbours of `query`, ordered by distance then index.
    /// `skip` may exclude one index (used for "neighbours of p other than p").
    pub fn knn(&self, query: &Point3<f64>, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        // Small k: a sorted Vec beats a heap.
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root, query, k, skip, &mut best);
        best
    }

    fn knn_rec(
        &self,
        id: i32,
        query: &Point3<f64>,
        k: usize,
        skip: Option<usize>,
        best: &mut Vec<(usize, f64)>,
    ) {
        if id < 0 {
            return;
        }
        let node = &self.nodes[id as usize];
        let idx = node.point as usize;
        if Some(idx) != skip {
            let d = (self.points[idx] - query).norm();
            let pos = best
                .binary_search_by(|(bi, bd)| bd.partial_cmp(&d).unwrap().then(bi.cmp(&idx)))
                .unwrap_or_else(|e| e);
            if pos < k {
                best.insert(pos, (idx, d));
                best.truncate(k);
            }
        }
        let p = &self.points[idx];
        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta <= 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.knn_rec(near, query, k, skip, best);
        let worst = if best.len() < k { f64::INFINITY } else { best[best.len() - 1].1 };
        if delta.abs() <= worst {
            self.knn_rec(far, query, k, skip, best);
        }
    }

    /// Nearest single point.
    pub fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        self.knn(query, 1, None).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Point3<f64>], q: &Point3<f64>, k: usize) -> Vec<usize> {
        let mut d: Vec<(usize, f64)> =
            points.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
        d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        d.into_iter().take(k).map(|(i, _)| i).collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..120),
            q in proptest::array::uniform3(-6.0f64..6.0),
            k in 1usize..8,
            r in 0.0f64..6.0,
        ) {
            let points: Vec<Point3<f64>> = pts.iter().map(|a| Point3::new(a[0], a[1], a[2])).collect();
            let query = Point3::new(q[0], q[1], q[2]);
            let tree = KdTree::build(&points);

            let got: Vec<usize> = tree.knn(&query, k, None).into_iter().map(|(i, _)| i).collect();
            let want = brute_knn(&points, &query, k.min(points.len()));
            prop_assert_eq!(got, want);

            let mut got_r = tree.within_radius(&query, r);
            got_r.sort_unstable();
            let want_r: Vec<usize> = points.iter().enumerate()
                .filter(|(_, p)| (*p - query).norm() <= r)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(got_r, want_r);
        }
    }

    #[test]
    fn skip_excludes_self() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        let tree = KdTree::build(&pts);
        let nn = tree.knn(&pts[0], 1, Some(0));
        assert_eq!(nn[0].0, 1);
    }
}
