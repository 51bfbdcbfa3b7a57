//! A static 3D kd-tree for exact k-nearest-neighbour queries.
//!
//! Results are ordered by `(squared distance, point index)`, so equidistant
//! neighbours resolve to the lowest index and queries are fully deterministic.

use nalgebra::Point3;

const LEAF_SIZE: usize = 16;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    axis: u8,
    split: f64,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    coords: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self::from_coords(coords)
    }

    pub fn from_coords(coords: Vec<[f64; 3]>) -> Self {
        assert!(coords.len() < NO_CHILD as usize, "too many points for kd-tree");
        let mut tree = Self {
            order: (0..coords.len() as u32).collect(),
            coords,
            nodes: Vec::new(),
        };
        if !tree.coords.is_empty() {
            tree.build(0, tree.coords.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            axis: 0,
            split: 0.0,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }

        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let c = self.coords[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            return id;
        }

        let mid = start + (end - start) / 2;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a as usize][axis]
                .total_cmp(&coords[b as usize][axis])
                .then(a.cmp(&b))
        });
        let split = self.coords[self.order[mid] as usize][axis];

        let left = self.build(start, mid);
        let right = self.build(mid, end);
        let node = &mut self.nodes[id as usize];
        node.axis = axis as u8;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<Neighbor> {
        let mut best = Vec::with_capacity(k + 1);
        if k == 0 || self.coords.is_empty() {
            return Vec::new();
        }
        self.search(0, &[query.x, query.y, query.z], k, &mut best);
        best
    }

    pub fn nearest(&self, query: &Point3<f64>) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    fn search(&self, node: u32, q: &[f64; 3], k: usize, best: &mut Vec<Neighbor>) {
        let n = &self.nodes[node as usize];
        if n.left == NO_CHILD {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let c = self.coords[i as usize];
                let d2 = (c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2) + (c[2] - q[2]).powi(2);
                insert_bounded(best, k, Neighbor { index: i as usize, dist2: d2 });
            }
            return;
        }
        let diff = q[n.axis as usize] - n.split;
        let (near, far) = if diff <= 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, k, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].dist2 {
            self.search(far, q, k, best);
        }
    }
}

fn neighbor_less(a: &Neighbor, b: &Neighbor) -> bool {
    a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)).is_lt()
}

fn insert_bounded(best: &mut Vec<Neighbor>, k: usize, cand: Neighbor) {
    if best.len() == k && !neighbor_less(&cand, &best[k - 1]) {
        return;
    }
    let pos = best.partition_point(|b| neighbor_less(b, &cand));
    best.insert(pos, cand);
    best.truncate(k);
}
