//! Static kd-tree over a flat coordinate array, with per-node bounding box,
//! mass and weighted second moments.

pub(crate) const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub start: usize,
    pub end: usize,
    /// Child node indices; `usize::MAX` for leaves.
    pub left: usize,
    pub right: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub moments: Moments,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }
}

/// Weighted mass, mean and scatter matrix `Σ w (p - mean)(p - mean)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub scatter: Vec<f64>,
}

impl Moments {
    pub fn zero(dim: usize) -> Moments {
        Moments { mass: 0.0, mean: vec![0.0; dim], scatter: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Weighted Welford update.
    pub fn push(&mut self, p: &[f64], w: f64) {
        if w <= 0.0 {
            return;
        }
        let n = self.dim();
        let total = self.mass + w;
        let delta: Vec<f64> = p.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let f = w / total;
        for i in 0..n {
            self.mean[i] += delta[i] * f;
        }
        let g = self.mass * w / total;
        for i in 0..n {
            for j in 0..n {
                self.scatter[i * n + j] += g * delta[i] * delta[j];
            }
        }
        self.mass = total;
    }

    /// Pairwise combination of two disjoint groups.
    pub fn merge(&mut self, o: &Moments) {
        if o.mass <= 0.0 {
            return;
        }
        if self.mass <= 0.0 {
            *self = o.clone();
            return;
        }
        let n = self.dim();
        let total = self.mass + o.mass;
        let delta: Vec<f64> = o.mean.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let f = o.mass / total;
        let g = self.mass * o.mass / total;
        for i in 0..n {
            self.mean[i] += delta[i] * f;
            for j in 0..n {
                self.scatter[i * n + j] += o.scatter[i * n + j] + g * delta[i] * delta[j];
            }
        }
        self.mass = total;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    pub dim: usize,
    /// Point indices in tree order.
    pub perm: Vec<usize>,
    pub nodes: Vec<Node>,
}

pub(crate) enum Visit<'a> {
    Node(&'a Node),
    Point(usize),
}

/// Per-node query verdict; the same arithmetic as the point test keeps the
/// box shortcuts consistent with a linear scan.
#[derive(PartialEq)]
enum Overlap {
    Inside,
    Outside,
    Partial,
}

#[inline]
pub(crate) fn in_ball(d2: f64, r2: f64, closed: bool) -> bool {
    if closed {
        d2 <= r2
    } else {
        d2 < r2
    }
}

impl KdTree {
    pub fn build(dim: usize, coords: &[f64], weights: &[f64]) -> KdTree {
        let n = weights.len();
        let mut tree = KdTree { dim, perm: (0..n).collect(), nodes: Vec::new() };
        if n > 0 {
            tree.build_node(coords, weights, 0, n);
        }
        tree
    }

    fn build_node(&mut self, coords: &[f64], weights: &[f64], start: usize, end: usize) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.perm[start..end] {
            for d in 0..dim {
                let x = coords[i * dim + d];
                lo[d] = lo[d].min(x);
                hi[d] = hi[d].max(x);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            left: usize::MAX,
            right: usize::MAX,
            lo: lo.clone(),
            hi: hi.clone(),
            moments: Moments::zero(dim),
        });
        let moments = if end - start <= LEAF_SIZE {
            let mut m = Moments::zero(dim);
            for &i in &self.perm[start..end] {
                m.push(&coords[i * dim..(i + 1) * dim], weights[i]);
            }
            m
        } else {
            let axis = (0..dim)
                .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap().then(b.cmp(&a)))
                .unwrap();
            let mid = (start + end) / 2;
            self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                coords[a * dim + axis].partial_cmp(&coords[b * dim + axis]).unwrap().then(a.cmp(&b))
            });
            let left = self.build_node(coords, weights, start, mid);
            let right = self.build_node(coords, weights, mid, end);
            self.nodes[id].left = left;
            self.nodes[id].right = right;
            let mut m = self.nodes[left].moments.clone();
            m.merge(&self.nodes[right].moments);
            m
        };
        self.nodes[id].moments = moments;
        id
    }

    fn overlap(&self, node: &Node, c: &[f64], r2: f64, closed: bool) -> Overlap {
        let mut near = 0.0;
        let mut far = 0.0;
        for d in 0..self.dim {
            let a = node.lo[d] - c[d];
            let b = node.hi[d] - c[d];
            let n = if a > 0.0 {
                a
            } else if b < 0.0 {
                -b
            } else {
                0.0
            };
            let f = a.abs().max(b.abs());
            near += n * n;
            far += f * f;
        }
        if !in_ball(near, r2, closed) {
            Overlap::Outside
        } else if in_ball(far, r2, closed) {
            Overlap::Inside
        } else {
            Overlap::Partial
        }
    }

    /// Reports whole nodes inside the ball and single points of partially
    /// covered leaves.
    pub fn visit<F>(&self, coords: &[f64], c: &[f64], r: f64, closed: bool, mut f: F)
    where
        F: FnMut(Visit<'_>),
    {
        if self.nodes.is_empty() {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            match self.overlap(node, c, r2, closed) {
                Overlap::Outside => {}
                Overlap::Inside => f(Visit::Node(node)),
                Overlap::Partial => {
                    if node.is_leaf() {
                        for &i in &self.perm[node.start..node.end] {
                            let p = &coords[i * self.dim..(i + 1) * self.dim];
                            if in_ball(crate::geometry::dist2(p, c), r2, closed) {
                                f(Visit::Point(i));
                            }
                        }
                    } else {
                        stack.push(node.right);
                        stack.push(node.left);
                    }
                }
            }
        }
    }

    /// Representatives of the points in the ball: every member lies within
    /// `resolution` of some returned index.
    pub fn net_in_ball(&self, coords: &[f64], c: &[f64], r: f64, resolution: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let r2 = r * r;
        let res2 = resolution * resolution;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let ov = self.overlap(node, c, r2, false);
            if ov == Overlap::Outside {
                continue;
            }
            let diam2 = crate::geometry::dist2(&node.lo, &node.hi);
            if diam2 <= res2 || node.is_leaf() {
                let small = diam2 <= res2;
                for &i in &self.perm[node.start..node.end] {
                    let p = &coords[i * self.dim..(i + 1) * self.dim];
                    if ov == Overlap::Inside || crate::geometry::dist2(p, c) < r2 {
                        out.push(i);
                        if small {
                            break;
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
        out.sort_unstable();
        out
    }

    fn box_dist2(&self, node: &Node, q: &[f64]) -> f64 {
        let mut near = 0.0;
        for d in 0..self.dim {
            let v = (node.lo[d] - q[d]).max(q[d] - node.hi[d]).max(0.0);
            near += v * v;
        }
        near
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// smaller index.
    pub fn nearest(&self, coords: &[f64], q: &[f64]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![(0usize, 0.0)];
        while let Some((id, near)) = stack.pop() {
            if near > best.1 {
                continue;
            }
            let node = &self.nodes[id];
            if node.is_leaf() {
                for &i in &self.perm[node.start..node.end] {
                    let d2 = crate::geometry::dist2(&coords[i * self.dim..(i + 1) * self.dim], q);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        best = (i, d2);
                    }
                }
            } else {
                let dl = self.box_dist2(&self.nodes[node.left], q);
                let dr = self.box_dist2(&self.nodes[node.right], q);
                // closer child on top of the stack
                if dl <= dr {
                    stack.push((node.right, dr));
                    stack.push((node.left, dl));
                } else {
                    stack.push((node.left, dl));
                    stack.push((node.right, dr));
                }
            }
        }
        Some(best)
    }
}
