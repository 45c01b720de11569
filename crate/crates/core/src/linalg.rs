//! Sparse symmetric indefinite factorization `A = L D Lᵀ` with
//! Bunch-Kaufman style 1×1 and 2×2 pivots chosen along a given elimination
//! order. Rows keep their original labels, so no interchanges are applied;
//! `D` gives the inertia of `A` for free.

/// Inertia `(positive, negative, zero)` eigenvalue counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone)]
enum Pivot {
    /// `d == 0` marks a zero pivot whose column was dropped.
    One { p: usize, d: f64, l: Vec<(usize, f64)> },
    /// Diagonal block `[[d11, d21], [d21, d22]]` on rows `p`, `q`.
    Two {
        p: usize,
        q: usize,
        d: (f64, f64, f64),
        l: Vec<(usize, f64, f64)>,
    },
}

/// Factorization of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricFactor {
    n: usize,
    pivots: Vec<Pivot>,
    inertia: Inertia,
}

/// Hand the rest to the dense kernel once a pivot column reaches this
/// fraction of the remaining rows.
const DENSE_SWITCH: f64 = 0.3;
const DENSE_MIN: usize = 16;
const BK_ALPHA: f64 = 0.640_388_203_202_208; // (1 + √17) / 8

/// Active part of the matrix during elimination.
struct Workspace {
    n: usize,
    values: Vec<f64>,
    present: Vec<bool>,
    adj: Vec<Vec<usize>>,
    done: Vec<bool>,
}

impl Workspace {
    fn key(&self, i: usize, j: usize) -> usize {
        if i >= j {
            i * self.n + j
        } else {
            j * self.n + i
        }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.key(i, j)]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.key(i, j);
        if !self.present[k] {
            self.present[k] = true;
            if i != j {
                self.adj[i].push(j);
                self.adj[j].push(i);
            }
        }
        self.values[k] += v;
    }

    /// Drops eliminated rows from the neighbour list of `i`.
    fn compact(&mut self, i: usize) {
        let done = &self.done;
        self.adj[i].retain(|&j| !done[j]);
    }
}

impl SymmetricFactor {
    /// Factors a symmetric matrix stored row-major, reading only the upper
    /// triangle, with Bunch-Kaufman pivoting in natural order. A pivot
    /// column is treated as a zero eigenvalue when its entries fall below
    /// `zero_tol` times the magnitude of everything accumulated into that
    /// row, i.e. when it is rounding noise.
    pub fn factor(a: Vec<f64>, n: usize, zero_tol: f64) -> Self {
        debug_assert_eq!(a.len(), n * n);
        let entries: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .filter(|&(i, j)| a[i * n + j] != 0.0)
            .map(|(i, j)| (i, j, a[i * n + j]))
            .collect();
        let order: Vec<usize> = (0..n).collect();
        Self::factor_sparse(n, &entries, &order, zero_tol, BK_ALPHA)
    }

    /// Factors the symmetric matrix given by `(i, j, v)` entries, each
    /// standing for both `A[i][j]` and `A[j][i]`; repeats are summed.
    /// Pivots follow `order` and a diagonal pivot is accepted whenever it
    /// is at least `threshold` times the largest entry in its column.
    /// Thresholds below the Bunch-Kaufman constant preserve sparsity at the
    /// cost of element growth.
    pub fn factor_sparse(
        n: usize,
        entries: &[(usize, usize, f64)],
        order: &[usize],
        zero_tol: f64,
        threshold: f64,
    ) -> Self {
        debug_assert_eq!(order.len(), n);
        let mut ws = Workspace {
            n,
            values: vec![0.0; n * n],
            present: vec![false; n * n],
            adj: vec![Vec::new(); n],
            done: vec![false; n],
        };
        for &(i, j, v) in entries {
            ws.add(i, j, v);
        }
        let mut mag = vec![0.0f64; n];
        for i in 0..n {
            mag[i] = mag[i].max(ws.get(i, i).abs());
            for &j in &ws.adj[i] {
                mag[i] = mag[i].max(ws.get(i, j).abs());
            }
        }
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        let mut pivots = Vec::with_capacity(n);
        let mut mark = vec![usize::MAX; n];
        let mut eliminated = 0;
        let mut cursor = 0;
        while eliminated < n {
            while ws.done[order[cursor]] {
                cursor += 1;
            }
            let p = order[cursor];
            ws.compact(p);
            let remaining = n - eliminated;
            if remaining > DENSE_MIN && ws.adj[p].len() as f64 >= DENSE_SWITCH * remaining as f64 {
                let labels: Vec<usize> = order[cursor..].iter().copied().filter(|&i| !ws.done[i]).collect();
                let m = labels.len();
                let mut a = vec![0.0; m * m];
                for j in 0..m {
                    for i in j..m {
                        a[j * m + i] = ws.get(labels[i], labels[j]);
                    }
                }
                let tail_mag = labels.iter().map(|&i| mag[i]).collect();
                dense_tail(labels, a, tail_mag, zero_tol, threshold, &mut inertia, &mut pivots);
                break;
            }
            let app = ws.get(p, p);
            let (r, colmax) = ws.adj[p]
                .iter()
                .map(|&i| (i, ws.get(i, p).abs()))
                .fold((p, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });

            let noise = zero_tol * mag[p];
            let (first, second) = if app.abs().max(colmax) <= noise || app.abs() >= threshold * colmax {
                (p, None)
            } else {
                ws.compact(r);
                let rowmax = ws.adj[r]
                    .iter()
                    .map(|&j| ws.get(j, r).abs())
                    .fold(0.0, f64::max);
                if app.abs() >= threshold * colmax * (colmax / rowmax) {
                    (p, None)
                } else if ws.get(r, r).abs() >= threshold * rowmax {
                    (r, None)
                } else {
                    (p, Some(r))
                }
            };

            match second {
                None => {
                    let p = first;
                    let d = ws.get(p, p);
                    ws.compact(p);
                    let col: Vec<(usize, f64)> = ws.adj[p]
                        .iter()
                        .map(|&i| (i, ws.get(i, p)))
                        .collect();
                    ws.done[p] = true;
                    eliminated += 1;
                    if d.abs() <= zero_tol * mag[p] {
                        inertia.zero += 1;
                        // Exact zero pivot: the column is not eliminated.
                        pivots.push(Pivot::One { p, d: 0.0, l: Vec::new() });
                        continue;
                    }
                    if d > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    let l: Vec<(usize, f64)> = col.iter().map(|&(i, c)| (i, c / d)).collect();
                    for (a, &(i, li)) in l.iter().enumerate() {
                        for &(j, cj) in &col[a..] {
                            ws.add(i, j, -li * cj);
                        }
                        mag[i] = mag[i].max((li * col[a].1).abs());
                    }
                    pivots.push(Pivot::One { p, d, l });
                }
                Some(q) => {
                    let (d11, d21, d22) = (ws.get(p, p), ws.get(q, p), ws.get(q, q));
                    let det = d11 * d22 - d21 * d21;
                    if det < 0.0 {
                        inertia.positive += 1;
                        inertia.negative += 1;
                    } else if d11 + d22 > 0.0 {
                        inertia.positive += 2;
                    } else {
                        inertia.negative += 2;
                    }
                    ws.done[p] = true;
                    ws.done[q] = true;
                    eliminated += 2;
                    let mut rows = Vec::new();
                    for &i in ws.adj[p].iter().chain(&ws.adj[q]) {
                        if !ws.done[i] && mark[i] != p {
                            mark[i] = p;
                            rows.push(i);
                        }
                    }
                    let (i11, i12, i22) = (d22 / det, -d21 / det, d11 / det);
                    let w: Vec<(usize, f64, f64)> = rows
                        .iter()
                        .map(|&i| (i, ws.get(i, p), ws.get(i, q)))
                        .collect();
                    let l: Vec<(usize, f64, f64)> = w
                        .iter()
                        .map(|&(i, w1, w2)| (i, w1 * i11 + w2 * i12, w1 * i12 + w2 * i22))
                        .collect();
                    for (a, &(i, l1, l2)) in l.iter().enumerate() {
                        for &(j, w1, w2) in &w[a..] {
                            ws.add(i, j, -(l1 * w1 + l2 * w2));
                        }
                        let (_, w1, w2) = w[a];
                        mag[i] = mag[i].max((l1 * w1).abs() + (l2 * w2).abs());
                    }
                    pivots.push(Pivot::Two {
                        p,
                        q,
                        d: (d11, d21, d22),
                        l,
                    });
                }
            }
        }
        Self { n, pivots, inertia }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place. Zero pivots contribute zero components.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        for pivot in &self.pivots {
            match pivot {
                Pivot::One { p, l, .. } => {
                    let bp = b[*p];
                    if bp != 0.0 {
                        for &(i, li) in l {
                            b[i] -= li * bp;
                        }
                    }
                }
                Pivot::Two { p, q, l, .. } => {
                    let (bp, bq) = (b[*p], b[*q]);
                    for &(i, l1, l2) in l {
                        b[i] -= l1 * bp + l2 * bq;
                    }
                }
            }
        }
        for pivot in &self.pivots {
            match *pivot {
                Pivot::One { p, d, .. } => {
                    b[p] = if d == 0.0 { 0.0 } else { b[p] / d };
                }
                Pivot::Two { p, q, d: (d11, d21, d22), .. } => {
                    let det = d11 * d22 - d21 * d21;
                    let (x1, x2) = (b[p], b[q]);
                    b[p] = (d22 * x1 - d21 * x2) / det;
                    b[q] = (d11 * x2 - d21 * x1) / det;
                }
            }
        }
        for pivot in self.pivots.iter().rev() {
            match pivot {
                Pivot::One { p, l, .. } => {
                    let dot: f64 = l.iter().map(|&(i, li)| li * b[i]).sum();
                    b[*p] -= dot;
                }
                Pivot::Two { p, q, l, .. } => {
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for &(i, l1, l2) in l {
                        s1 += l1 * b[i];
                        s2 += l2 * b[i];
                    }
                    b[*p] -= s1;
                    b[*q] -= s2;
                }
            }
        }
    }
}

/// Dense Bunch-Kaufman on the remaining rows `labels`, with `a` the
/// column-major lower triangle of the active submatrix.
fn dense_tail(
    mut labels: Vec<usize>,
    mut a: Vec<f64>,
    mut mag: Vec<f64>,
    zero_tol: f64,
    threshold: f64,
    inertia: &mut Inertia,
    pivots: &mut Vec<Pivot>,
) {
    let n = labels.len();
    let idx = |i: usize, j: usize| j * n + i;
    for j in 0..n {
        for (i, v) in (j..n).zip(&a[j * n + j..(j + 1) * n]) {
            let v = v.abs();
            mag[i] = mag[i].max(v);
            mag[j] = mag[j].max(v);
        }
    }
    // (position, block) with `None` for a dropped zero pivot
    let mut blocks: Vec<(usize, Option<(f64, f64, f64)>, usize)> = Vec::new();
    let mut dense1 = vec![0.0; n];
    let mut dense2 = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let absakk = a[idx(k, k)].abs();
        let (imax, colmax) = ((k + 1)..n)
            .zip(&a[idx(k + 1, k)..(k + 1) * n])
            .map(|(i, v)| (i, v.abs()))
            .fold((k, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });

        let (kp, kstep);
        let noise = zero_tol * mag[k];
        if absakk.max(colmax) <= noise || absakk >= threshold * colmax {
            kp = k;
            kstep = 1;
        } else {
            let rowmax = (k..n)
                .filter(|&j| j != imax)
                .map(|j| if j < imax { a[idx(imax, j)].abs() } else { a[idx(j, imax)].abs() })
                .fold(0.0, f64::max);
            if absakk >= threshold * colmax * (colmax / rowmax) {
                kp = k;
                kstep = 1;
            } else if a[idx(imax, imax)].abs() >= threshold * rowmax {
                kp = imax;
                kstep = 1;
            } else {
                kp = imax;
                kstep = 2;
            }
        }

        let kk = k + kstep - 1;
        if kp != kk {
            swap_sym(&mut a, n, kk, kp);
            mag.swap(kk, kp);
            labels.swap(kk, kp);
        }

        if kstep == 1 {
            let d = a[idx(k, k)];
            if d.abs() <= zero_tol * mag[k] {
                inertia.zero += 1;
                a[idx(k, k) + 1..(k + 1) * n].fill(0.0);
                blocks.push((k, None, 1));
                k += 1;
                continue;
            }
            if d > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            dense1[k + 1..].copy_from_slice(&a[idx(k + 1, k)..(k + 1) * n]);
            for j in (k + 1)..n {
                let f = dense1[j] / d;
                if f == 0.0 {
                    continue;
                }
                for (t, c) in a[idx(j, j)..(j + 1) * n].iter_mut().zip(&dense1[j..]) {
                    *t -= f * c;
                }
            }
            for i in (k + 1)..n {
                let ci = dense1[i];
                mag[i] = mag[i].max((ci * ci / d).abs());
                a[idx(i, k)] = ci / d;
            }
            blocks.push((k, Some((d, 0.0, 0.0)), 1));
        } else {
            let d11 = a[idx(k, k)];
            let d21 = a[idx(k + 1, k)];
            let d22 = a[idx(k + 1, k + 1)];
            let det = d11 * d22 - d21 * d21;
            if det < 0.0 {
                inertia.positive += 1;
                inertia.negative += 1;
            } else if d11 + d22 > 0.0 {
                inertia.positive += 2;
            } else {
                inertia.negative += 2;
            }
            let (i11, i12, i22) = (d22 / det, -d21 / det, d11 / det);
            dense1[k + 2..].copy_from_slice(&a[idx(k + 2, k)..(k + 1) * n]);
            dense2[k + 2..].copy_from_slice(&a[idx(k + 2, k + 1)..(k + 2) * n]);
            for j in (k + 2)..n {
                let (w1, w2) = (dense1[j], dense2[j]);
                let (l1, l2) = (w1 * i11 + w2 * i12, w1 * i12 + w2 * i22);
                if l1 == 0.0 && l2 == 0.0 {
                    continue;
                }
                let target = &mut a[idx(j, j)..(j + 1) * n];
                for ((t, c1), c2) in target.iter_mut().zip(&dense1[j..]).zip(&dense2[j..]) {
                    *t -= l1 * c1 + l2 * c2;
                }
            }
            for i in (k + 2)..n {
                let (w1, w2) = (dense1[i], dense2[i]);
                let (l1, l2) = (w1 * i11 + w2 * i12, w1 * i12 + w2 * i22);
                mag[i] = mag[i].max((l1 * w1).abs() + (l2 * w2).abs());
                a[idx(i, k)] = l1;
                a[idx(i, k + 1)] = l2;
            }
            blocks.push((k, Some((d11, d21, d22)), 2));
        }
        k += kstep;
    }
    // Later interchanges were applied to earlier columns too, so the final
    // labels name the rows of every column.
    for (k, block, size) in blocks {
        let p = labels[k];
        match (block, size) {
            (None, _) => pivots.push(Pivot::One { p, d: 0.0, l: Vec::new() }),
            (Some((d, _, _)), 1) => {
                let l = ((k + 1)..n)
                    .map(|i| (labels[i], a[idx(i, k)]))
                    .filter(|&(_, v)| v != 0.0)
                    .collect();
                pivots.push(Pivot::One { p, d, l });
            }
            (Some(d), _) => {
                let l = ((k + 2)..n)
                    .map(|i| (labels[i], a[idx(i, k)], a[idx(i, k + 1)]))
                    .filter(|&(_, l1, l2)| l1 != 0.0 || l2 != 0.0)
                    .collect();
                pivots.push(Pivot::Two { p, q: labels[k + 1], d, l });
            }
        }
    }
}

/// Symmetric interchange of rows and columns `i` and `j` in column-major
/// lower storage (which also carries the computed columns of `L`).
fn swap_sym(a: &mut [f64], n: usize, i: usize, j: usize) {
    let (i, j) = (i.min(j), i.max(j));
    let idx = |r: usize, c: usize| c * n + r;
    for c in 0..i {
        a.swap(idx(i, c), idx(j, c));
    }
    a.swap(idx(i, i), idx(j, j));
    for r in (i + 1)..j {
        a.swap(idx(r, i), idx(j, r));
    }
    for r in (j + 1)..n {
        a.swap(idx(r, i), idx(r, j));
    }
}

/// Minimum-degree elimination order of a symmetric sparsity pattern given
/// by its off-diagonal entries. Returns `order` with `order[new] = old`;
/// ties go to the lower original index.
pub fn minimum_degree_order(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let words = n.div_ceil(64);
    let mut adj = vec![0u64; n * words];
    let set = |adj: &mut [u64], i: usize, j: usize| adj[i * words + j / 64] |= 1 << (j % 64);
    for &(i, j) in edges {
        if i != j {
            set(&mut adj, i, j);
            set(&mut adj, j, i);
        }
    }
    let degree_of = |adj: &[u64], i: usize| -> usize {
        adj[i * words..(i + 1) * words]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    };
    let mut degree: Vec<usize> = (0..n).map(|i| degree_of(&adj, i)).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| !done[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("a remaining node");
        done[v] = true;
        order.push(v);
        let row: Vec<u64> = adj[v * words..(v + 1) * words].to_vec();
        let neighbours: Vec<usize> = (0..n)
            .filter(|&u| row[u / 64] >> (u % 64) & 1 == 1)
            .collect();
        for &u in &neighbours {
            let target = &mut adj[u * words..(u + 1) * words];
            for (t, r) in target.iter_mut().zip(&row) {
                *t |= r;
            }
            target[u / 64] &= !(1 << (u % 64));
            target[v / 64] &= !(1 << (v % 64));
            degree[u] = degree_of(&adj, u);
        }
    }
    order
}
