//! Independent oracles and random fixtures shared by the integration tests.
//!
//! Every oracle here is a plain loop over the definitions, written without
//! calling the library's numerical code.
#![allow(dead_code)]

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use use_embed::objective::{objective_and_gradient, total_objective};
use use_embed::{AttributeTable, Dataset, Hyperparams, NodeId, Params, Regularization, Taxonomy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Leaves a,b under p; c,d under q; p,q under root r.
pub fn two_level() -> Taxonomy {
    Taxonomy::from_edges([
        ("a", "p"),
        ("b", "p"),
        ("c", "q"),
        ("d", "q"),
        ("p", "r"),
        ("q", "r"),
    ])
    .unwrap()
}

/// A random forest: supercategories hang under earlier supercategories or
/// start a new root; leaves hang under random supercategories.
pub fn random_taxonomy(rng: &mut impl Rng) -> Taxonomy {
    let supers = rng.random_range(1..5usize);
    let leaves = rng.random_range(2..9usize);
    let mut edges: Vec<(String, String)> = Vec::new();
    for s in 1..supers {
        if rng.random_bool(0.8) {
            let p = rng.random_range(0..s);
            edges.push((format!("s{s}"), format!("s{p}")));
        }
    }
    // every supercategory keeps at least one child so it stays a supercategory
    let mut parents: Vec<usize> = (0..supers).collect();
    while parents.len() < leaves {
        parents.push(rng.random_range(0..supers));
    }
    parents.shuffle(rng);
    for (l, p) in parents.iter().enumerate() {
        edges.push((format!("l{l}"), format!("s{p}")));
    }
    edges.shuffle(rng);
    Taxonomy::from_edges(edges).unwrap()
}

pub fn random_attributes(rng: &mut impl Rng, classes: usize, attrs: usize) -> AttributeTable {
    let names = (0..attrs).map(|a| format!("attr{a}")).collect();
    let labels = Array2::from_shape_simple_fn((classes, attrs), || rng.random_bool(0.5) as u8);
    AttributeTable::new(names, labels).unwrap()
}

pub fn random_dataset(
    rng: &mut impl Rng,
    taxonomy: &Taxonomy,
    n: usize,
    d: usize,
    attrs: usize,
) -> Dataset {
    let c = taxonomy.num_leaves();
    let x = uniform(rng, n, d, 1.0);
    let y = (0..n).map(|_| NodeId(rng.random_range(1..=c))).collect();
    Dataset::new(x, y, taxonomy.clone(), random_attributes(rng, c, attrs)).unwrap()
}

pub fn is_root(t: &Taxonomy, id: NodeId) -> bool {
    t.parent(id).unwrap().is_none()
}

/// Random parameters with non-negative `B` and zero root columns.
pub fn random_params(rng: &mut impl Rng, de: usize, ds: &Dataset, scale: f64) -> Params {
    let t = ds.taxonomy();
    let a = ds.attributes().num_attributes();
    let mut p = Params {
        w: uniform(rng, de, ds.dim(), scale),
        u_cat: uniform(rng, de, t.num_leaves(), scale),
        u_sup: uniform(rng, de, t.num_supers(), scale),
        u_attr: uniform(rng, de, a, scale),
        b: Array2::from_shape_simple_fn((a, t.len()), || rng.random_range(0.0..1.0)),
    };
    for id in t.node_ids().filter(|&id| is_root(t, id)) {
        p.b.column_mut(id.index()).fill(0.0);
    }
    p
}

pub fn hyper(mu1: f64, mu2: f64, gamma2: f64, de: usize) -> Hyperparams {
    Hyperparams {
        embed_dim: de,
        mu1,
        mu2,
        gamma2,
        ..Default::default()
    }
}

// ---- loss oracles ----

pub fn mat_vec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; w.nrows()];
    for (i, zi) in z.iter_mut().enumerate() {
        for (j, xj) in x.iter().enumerate() {
            *zi += w[[i, j]] * xj;
        }
    }
    z
}

fn col(m: &Array2<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[[i, j]]).collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Tracks the hinge argument closest to zero, so callers can avoid kinks.
#[derive(Default)]
pub struct Kinks {
    pub closest: f64,
}

impl Kinks {
    pub fn new() -> Self {
        Kinks {
            closest: f64::INFINITY,
        }
    }

    fn hinge(&mut self, v: f64) -> f64 {
        self.closest = self.closest.min(v.abs());
        if v > 0.0 {
            v
        } else {
            0.0
        }
    }
}

/// Embedding column of any node (leaf or supercategory).
pub fn concept(p: &Params, t: &Taxonomy, id: NodeId) -> Vec<f64> {
    let i = id.index();
    if i < t.num_leaves() {
        col(&p.u_cat, i)
    } else {
        col(&p.u_sup, i - t.num_leaves())
    }
}

fn ancestors(t: &Taxonomy, id: NodeId) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut cur = id;
    while let Some(p) = t.parent(cur).unwrap() {
        out.push(p);
        cur = p;
    }
    out
}

fn siblings(t: &Taxonomy, id: NodeId) -> Vec<NodeId> {
    let Some(p) = t.parent(id).unwrap() else {
        return Vec::new();
    };
    t.node_ids()
        .filter(|&o| o != id && t.parent(o).unwrap() == Some(p))
        .collect()
}

pub fn oracle_lc(p: &Params, x: &[f64], y: NodeId, kinks: &mut Kinks) -> f64 {
    let z = mat_vec(&p.w, x);
    let dy = sq_dist(&z, &col(&p.u_cat, y.index()));
    let mut loss = 0.0;
    for c in 0..p.u_cat.ncols() {
        if c != y.index() {
            loss += kinks.hinge(1.0 + dy - sq_dist(&z, &col(&p.u_cat, c)));
        }
    }
    loss
}

pub fn oracle_ls(p: &Params, t: &Taxonomy, x: &[f64], y: NodeId, kinks: &mut Kinks) -> f64 {
    let z = mat_vec(&p.w, x);
    let mut loss = 0.0;
    for s in ancestors(t, y) {
        let ds = sq_dist(&z, &concept(p, t, s));
        for o in siblings(t, s) {
            loss += kinks.hinge(1.0 + ds - sq_dist(&z, &concept(p, t, o)));
        }
    }
    loss
}

pub fn oracle_la(
    p: &Params,
    attrs: &AttributeTable,
    sigma: f64,
    x: &[f64],
    y: NodeId,
    kinks: &mut Kinks,
) -> f64 {
    let z = mat_vec(&p.w, x);
    let mut loss = 0.0;
    for a in 0..attrs.num_attributes() {
        if attrs.labels()[[y.index(), a]] == 1 {
            let ua = col(&p.u_attr, a);
            let corr: f64 = z.iter().zip(&ua).map(|(u, v)| u * v).sum();
            loss += kinks.hinge(sigma - corr);
        }
    }
    loss
}

/// Beta of a node; roots contribute the zero vector.
fn beta(p: &Params, t: &Taxonomy, id: NodeId) -> Vec<f64> {
    if is_root(t, id) {
        vec![0.0; p.b.nrows()]
    } else {
        col(&p.b, id.index())
    }
}

pub fn oracle_reg(p: &Params, t: &Taxonomy, gamma2: f64) -> f64 {
    let mut total = 0.0;
    for c in t.node_ids() {
        let Some(parent) = t.parent(c).unwrap() else {
            continue;
        };
        let bc = beta(p, t, c);
        let uc = concept(p, t, c);
        let up = concept(p, t, parent);
        for k in 0..uc.len() {
            let mut recon = 0.0;
            for (a, bv) in bc.iter().enumerate() {
                recon += p.u_attr[[k, a]] * bv;
            }
            let r = uc[k] - up[k] - recon;
            total += r * r;
        }
        for o in ancestors(t, c).into_iter().chain(siblings(t, c)) {
            let bo = beta(p, t, o);
            for a in 0..bc.len() {
                total += gamma2 * (bc[a] + bo[a]) * (bc[a] + bo[a]);
            }
        }
    }
    total
}

pub fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// `(total, closest hinge argument)` recomputed from scratch.
pub fn oracle_total(p: &Params, ds: &Dataset, h: &Hyperparams) -> (f64, f64) {
    let t = ds.taxonomy();
    let mut kinks = Kinks::new();
    let (mut lc, mut ls, mut la) = (0.0, 0.0, 0.0);
    for (row, &y) in ds.features().rows().into_iter().zip(ds.labels()) {
        let x = row.to_vec();
        lc += oracle_lc(p, &x, y, &mut kinks);
        ls += oracle_ls(p, t, &x, y, &mut kinks);
        la += oracle_la(p, ds.attributes(), h.sigma, &x, y, &mut kinks);
    }
    let mut total = lc + h.mu1 * (ls + la) + h.mu2 * oracle_reg(p, t, h.gamma2);
    if h.regularization == Regularization::Penalty {
        total += h.lambda * (frob(&p.w) + frob(&p.u_cat) + frob(&p.u_sup) + frob(&p.u_attr));
    }
    (total, kinks.closest)
}

// ---- metric oracles ----

/// Leaves sorted by distance to `W x`, ties to the smaller id, by selection.
pub fn oracle_ranking(p: &Params, x: &[f64]) -> Vec<NodeId> {
    let z = mat_vec(&p.w, x);
    let mut left: Vec<(usize, f64)> = (0..p.u_cat.ncols())
        .map(|c| (c, sq_dist(&z, &col(&p.u_cat, c))))
        .collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            if left[i].1 < left[best].1 {
                best = i;
            }
        }
        out.push(NodeId(left.remove(best).0 + 1));
    }
    out
}

pub fn oracle_flat_hit(rankings: &[Vec<NodeId>], labels: &[NodeId], k: usize) -> f64 {
    let mut hits = 0;
    for (r, y) in rankings.iter().zip(labels) {
        for top in r.iter().take(k) {
            if top == y {
                hits += 1;
            }
        }
    }
    hits as f64 / labels.len() as f64
}

fn leaf_is_under(t: &Taxonomy, leaf: NodeId, a: NodeId) -> bool {
    leaf == a || ancestors(t, leaf).contains(&a)
}

pub fn oracle_hp(rankings: &[Vec<NodeId>], labels: &[NodeId], t: &Taxonomy, k: usize) -> f64 {
    let k = k.min(t.num_leaves());
    let mut total = 0.0;
    for (r, &y) in rankings.iter().zip(labels) {
        let mut levels = vec![y];
        levels.extend(ancestors(t, y).into_iter().filter(|&a| !is_root(t, a)));
        let mut score = 0.0;
        for &a in &levels {
            let size = t.leaf_ids().filter(|&l| leaf_is_under(t, l, a)).count();
            let hit = r
                .iter()
                .take(k)
                .filter(|&&l| leaf_is_under(t, l, a))
                .count();
            score += hit as f64 / k.min(size) as f64;
        }
        total += score / levels.len() as f64;
    }
    total / labels.len() as f64
}

// ---- small dense linear algebra ----

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    let mut b = b.clone();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[[i, k]].abs().total_cmp(&a[[j, k]].abs()))
            .unwrap();
        for j in 0..n {
            a.swap([k, j], [piv, j]);
        }
        for j in 0..b.ncols() {
            b.swap([k, j], [piv, j]);
        }
        for i in k + 1..n {
            let f = a[[i, k]] / a[[k, k]];
            for j in k..n {
                a[[i, j]] -= f * a[[k, j]];
            }
            for j in 0..b.ncols() {
                b[[i, j]] -= f * b[[k, j]];
            }
        }
    }
    let mut x = Array2::zeros(b.dim());
    for j in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = b[[i, j]];
            for l in i + 1..n {
                s -= a[[i, l]] * x[[l, j]];
            }
            x[[i, j]] = s / a[[i, i]];
        }
    }
    x
}

pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            for k in 0..a.ncols() {
                c[[i, j]] += a[[i, k]] * b[[k, j]];
            }
        }
    }
    c
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---- finite differences ----

const FD_STEP: f64 = 1e-5;

fn rel_err(g: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = g
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = g
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(fd.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Relative errors `[W, U, B]` between the analytic subgradient and central
/// differences of the objective. Root columns of `B` are fixed at zero and
/// skipped.
pub fn fd_errors(p: &Params, ds: &Dataset, h: &Hyperparams) -> [f64; 3] {
    let f = |q: &Params| total_objective(q, ds, h).unwrap().total;
    let (_, g) = objective_and_gradient(p, ds, h).unwrap();
    let mut errs = [0.0; 3];
    let t = ds.taxonomy();
    type Pick = fn(&mut Params) -> &mut Array2<f64>;
    let blocks: [(usize, Pick); 5] = [
        (0, |q| &mut q.w),
        (1, |q| &mut q.u_cat),
        (1, |q| &mut q.u_sup),
        (1, |q| &mut q.u_attr),
        (2, |q| &mut q.b),
    ];
    let mut analytic: [Vec<f64>; 3] = Default::default();
    let mut numeric: [Vec<f64>; 3] = Default::default();
    for (slot, pick) in blocks {
        let mut gq = g.clone();
        let gm = pick(&mut gq).clone();
        let mut q = p.clone();
        let (rows, cols) = pick(&mut q).dim();
        for j in 0..cols {
            if slot == 2 && is_root(t, NodeId::from_index(j)) {
                continue;
            }
            for i in 0..rows {
                let orig = pick(&mut q)[[i, j]];
                pick(&mut q)[[i, j]] = orig + FD_STEP;
                let up = f(&q);
                pick(&mut q)[[i, j]] = orig - FD_STEP;
                let down = f(&q);
                pick(&mut q)[[i, j]] = orig;
                numeric[slot].push((up - down) / (2.0 * FD_STEP));
                analytic[slot].push(gm[[i, j]]);
            }
        }
    }
    for s in 0..3 {
        errs[s] = rel_err(&analytic[s], &numeric[s]);
    }
    errs
}

/// A random point whose hinge arguments all stay at least `margin` away from
/// zero, so central differences with a small step never straddle a kink.
pub fn non_kink_point(rng: &mut impl Rng, ds: &Dataset, h: &Hyperparams, margin: f64) -> Params {
    loop {
        let p = random_params(rng, h.embed_dim, ds, 1.0);
        if oracle_total(&p, ds, h).1 >= margin {
            return p;
        }
    }
}

// ---- sparse-coding grid oracle ----

/// A small regularizer instance: embeddings plus taxonomy, with `A <= 3`.
pub struct CodeInstance {
    pub taxonomy: Taxonomy,
    pub params: Params,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Shapes cycle through: one child of a root with three attributes; two
/// siblings with one attribute; two siblings with two attributes sharing a
/// direction; a root-super-leaf chain with two attributes.
pub fn code_instance(rng: &mut impl Rng, i: usize) -> CodeInstance {
    let (edges, attrs, gamma1): (Vec<(&str, &str)>, usize, f64) = match i % 4 {
        0 => (vec![("c", "r")], 3, rng.random_range(0.3..1.0)),
        1 => (
            vec![("c1", "r"), ("c2", "r")],
            1,
            rng.random_range(0.3..1.0),
        ),
        2 => (
            vec![("c1", "r"), ("c2", "r")],
            2,
            rng.random_range(0.2..0.4),
        ),
        _ => (vec![("c", "s"), ("s", "r")], 2, rng.random_range(0.2..0.4)),
    };
    let taxonomy = Taxonomy::from_edges(edges).unwrap();
    let de = 3;
    let mut u_attr = uniform(rng, de, attrs, 1.0);
    if i % 4 == 2 {
        // both siblings lean on the first attribute direction
        let shared: Vec<f64> = (0..de).map(|k| u_attr[[k, 0]]).collect();
        for k in 0..de {
            u_attr[[k, 1]] = 0.5 * u_attr[[k, 1]] + 0.5 * shared[k];
        }
    }
    let mut params = Params {
        w: Array2::zeros((de, 0)),
        u_cat: uniform(rng, de, taxonomy.num_leaves(), 1.0),
        u_sup: uniform(rng, de, taxonomy.num_supers(), 1.0),
        u_attr,
        b: Array2::zeros((attrs, taxonomy.len())),
    };
    if i % 4 == 2 {
        let root = taxonomy.num_leaves();
        for c in 0..2 {
            for k in 0..de {
                params.u_cat[[k, c]] = params.u_sup[[k, root - 2]]
                    + 0.3 * params.u_attr[[k, 0]]
                    + 0.1 * rng.random_range(-1.0..1.0);
            }
        }
    }
    CodeInstance {
        taxonomy,
        params,
        gamma1,
        gamma2: rng
            .random_range(0.0..1.0f64)
            .max(if i % 4 == 2 { 1.0 } else { 0.0 }),
    }
}

/// Exhaustive search over `B` on the grid `{0, 0.01, ..., gamma1}` for
/// every non-root column. Returns the best objective.
///
/// The regularizer is an exact quadratic in the free entries, so its
/// coefficients are read off from a few oracle evaluations and the grid is
/// scanned on the quadratic; the winner is re-scored with the oracle.
pub fn grid_oracle(inst: &CodeInstance) -> f64 {
    let t = &inst.taxonomy;
    let free: Vec<usize> = t
        .node_ids()
        .filter(|&id| !is_root(t, id))
        .map(|id| id.index())
        .collect();
    let a = inst.params.b.nrows();
    let dims = free.len() * a;
    let eval = |v: &[f64]| {
        let mut p = inst.params.clone();
        for (n, &c) in free.iter().enumerate() {
            for k in 0..a {
                p.b[[k, c]] = v[n * a + k];
            }
        }
        oracle_reg(&p, t, inst.gamma2)
    };
    let unit = |i: usize, s: f64| {
        let mut v = vec![0.0; dims];
        v[i] = s;
        v
    };
    let c0 = eval(&vec![0.0; dims]);
    let mut g = vec![0.0; dims];
    let mut h = vec![vec![0.0; dims]; dims];
    for i in 0..dims {
        let (up, down) = (eval(&unit(i, 1.0)), eval(&unit(i, -1.0)));
        g[i] = (up - down) / 2.0;
        h[i][i] = up + down - 2.0 * c0;
    }
    for i in 0..dims {
        for j in 0..i {
            let mut v = unit(i, 1.0);
            v[j] = 1.0;
            h[i][j] = eval(&v) - c0 - g[i] - g[j] - 0.5 * (h[i][i] + h[j][j]);
            h[j][i] = h[i][j];
        }
    }
    let quad = |v: &[f64]| {
        let mut f = c0;
        for i in 0..dims {
            f += g[i] * v[i];
            for j in 0..dims {
                f += 0.5 * h[i][j] * v[i] * v[j];
            }
        }
        f
    };
    // 0, 0.01, ... and the closed end gamma1 itself
    let mut values: Vec<f64> = (0..)
        .map(|k| k as f64 * 0.01)
        .take_while(|&x| x < inst.gamma1)
        .collect();
    values.push(inst.gamma1);
    let steps = values.len();
    let mut idx = vec![0usize; dims];
    let mut v = vec![0.0; dims];
    let mut best = (f64::INFINITY, v.clone());
    loop {
        for i in 0..dims {
            v[i] = values[idx[i]];
        }
        let f = quad(&v);
        if f < best.0 {
            best = (f, v.clone());
        }
        let mut pos = 0;
        loop {
            if pos == dims {
                return eval(&best.1);
            }
            idx[pos] += 1;
            if idx[pos] < steps {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

// ---- few-shot split ----

/// Two novel leaves drawn (seeded) from distinct parents; the rest form the
/// source classes.
pub fn novel_split(t: &Taxonomy, seed: u64) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut leaves: Vec<NodeId> = t.leaf_ids().collect();
    leaves.shuffle(&mut rng(seed));
    let p0 = t.parent(leaves[0]).unwrap();
    let j = (1..leaves.len())
        .find(|&j| t.parent(leaves[j]).unwrap() != p0)
        .unwrap();
    leaves.swap(1, j);
    let base = leaves.split_off(2);
    (leaves, base)
}
