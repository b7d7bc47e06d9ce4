//! Reference implementations used as test oracles. They are written
//! independently of the library code and favour plainness over speed.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use docdbm::corpus::CountVector;
use docdbm::DbmModel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force DBSCAN structure: core flags, the connected component of each
/// core point in the core graph, and for every other point the set of
/// components it touches (empty for noise).
pub struct DbscanReference {
    pub core: Vec<bool>,
    pub component: Vec<Option<usize>>,
    pub reachable: Vec<BTreeSet<usize>>,
    pub n_components: usize,
}

pub fn dbscan_reference(points: &Array2<f64>, eps: f64, min_pts: usize) -> DbscanReference {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let near: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| dist(&rows[i], &rows[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = (0..n)
        .map(|i| near[i].iter().filter(|&&b| b).count() >= min_pts)
        .collect();

    // Union-find over core-core edges.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near[i][j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut roots = Vec::new();
    let mut component = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let c = roots.iter().position(|&x| x == r).unwrap_or_else(|| {
                roots.push(r);
                roots.len() - 1
            });
            component[i] = Some(c);
        }
    }
    let reachable = (0..n)
        .map(|i| {
            if core[i] {
                BTreeSet::new()
            } else {
                (0..n)
                    .filter(|&j| core[j] && near[i][j])
                    .map(|j| component[j].unwrap())
                    .collect()
            }
        })
        .collect();
    DbscanReference {
        core,
        component,
        reachable,
        n_components: roots.len(),
    }
}

/// True when `labels` equal the reference partition up to renaming: core
/// points grouped exactly by component, each border point in one of the
/// clusters it touches, noise exactly the points touching none.
pub fn partition_matches(labels: &[i64], r: &DbscanReference) -> Result<(), String> {
    let mut to_label: Vec<Option<i64>> = vec![None; r.n_components];
    let mut used = BTreeSet::new();
    for (i, c) in r.component.iter().enumerate() {
        if let Some(c) = *c {
            let l = labels[i];
            if l < 0 {
                return Err(format!("core point {i} labelled noise"));
            }
            match to_label[c] {
                None => {
                    if !used.insert(l) {
                        return Err(format!("label {l} spans two components"));
                    }
                    to_label[c] = Some(l);
                }
                Some(m) if m != l => return Err(format!("component {c} split across {m} and {l}")),
                _ => {}
            }
        }
    }
    for (i, reach) in r.reachable.iter().enumerate() {
        if r.core[i] {
            continue;
        }
        let l = labels[i];
        if reach.is_empty() {
            if l != -1 {
                return Err(format!("noise point {i} labelled {l}"));
            }
        } else if !reach.iter().any(|&c| to_label[c] == Some(l)) {
            return Err(format!(
                "border point {i} labelled {l}, not an adjacent cluster"
            ));
        }
    }
    if labels.iter().any(|&l| l >= 0 && !used.contains(&l)) {
        return Err("a cluster holds no core point".into());
    }
    Ok(())
}

pub fn uniform_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

/// Perplexity `2^H` of the conditional distribution of point `i` with
/// Gaussian precision `beta`, computed from scratch.
pub fn perplexity_of(points: &Array2<f64>, i: usize, beta: f64) -> (f64, Vec<f64>) {
    let n = points.nrows();
    let row_i = points.row(i).to_vec();
    let d2: Vec<f64> = (0..n)
        .map(|j| {
            let d = dist(&row_i, &points.row(j).to_vec());
            d * d
        })
        .collect();
    let m = (0..n)
        .filter(|&j| j != i)
        .map(|j| d2[j])
        .fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = (0..n)
        .map(|j| {
            if j == i {
                0.0
            } else {
                (-beta * (d2[j] - m)).exp()
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / z).collect();
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|x| -x * x.log2()).sum();
    (h.exp2(), p)
}

/// KL(P || Q) with the Student-t Q of the 2-D coordinates `y`.
pub fn tsne_kl(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = y.nrows();
    let mut q = Array2::<f64>::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                q[[i, j]] = 1.0 / (1.0 + dx * dx + dy * dy);
                z += q[[i, j]];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[[i, j]] > 0.0 {
                kl += p[[i, j]] * (p[[i, j]] / (q[[i, j]] / z)).ln();
            }
        }
    }
    kl
}

/// Two `per`-point Gaussian blobs in `dim` dimensions, unit spread, centres
/// `gap` apart along the first axis. Returns the points and blob membership.
pub fn two_blobs(per: usize, dim: usize, gap: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Array2::zeros((2 * per, dim));
    let mut blob = Vec::with_capacity(2 * per);
    for i in 0..2 * per {
        let b = i / per;
        for k in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            pts[[i, k]] = z + if k == 0 { gap * b as f64 } else { 0.0 };
        }
        blob.push(b);
    }
    (pts, blob)
}

/// Whether the perpendicular bisector of the two 2-D blob centroids puts
/// every point on its own blob's side.
pub fn bisector_separates(y: &Array2<f64>, blob: &[usize]) -> bool {
    let mut c = [[0.0; 2]; 2];
    let mut count = [0.0; 2];
    for (i, &b) in blob.iter().enumerate() {
        c[b][0] += y[[i, 0]];
        c[b][1] += y[[i, 1]];
        count[b] += 1.0;
    }
    for b in 0..2 {
        c[b][0] /= count[b];
        c[b][1] /= count[b];
    }
    let mid = [(c[0][0] + c[1][0]) / 2.0, (c[0][1] + c[1][1]) / 2.0];
    let dir = [c[1][0] - c[0][0], c[1][1] - c[0][1]];
    blob.iter().enumerate().all(|(i, &b)| {
        let s = (y[[i, 0]] - mid[0]) * dir[0] + (y[[i, 1]] - mid[1]) * dir[1];
        if b == 0 {
            s < 0.0
        } else {
            s > 0.0
        }
    })
}

/// Area under the ROC curve by pair counting, ties counted half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Encode→decode→L1 error by explicit loops over the parameter arrays.
pub fn scalar_pass(v: &CountVector, m: &DbmModel) -> (Vec<f64>, Vec<f64>, f64) {
    let (k, h1, h2) = (m.n_visible(), m.n_hidden1(), m.n_hidden2());
    let dense: Vec<f64> = (0..k).map(|i| f64::from(v.get(i))).collect();
    let d: f64 = dense.iter().sum();
    let mut hid = vec![0.0; h1];
    for j in 0..h1 {
        let mut s = d * m.layer1.b[j];
        for i in 0..k {
            s += m.layer1.w[[i, j]] * dense[i];
        }
        hid[j] = logistic(s);
    }
    let mut latent = vec![0.0; h2];
    for l in 0..h2 {
        let mut s = m.layer2.b[l];
        for j in 0..h1 {
            s += m.layer2.w[[j, l]] * hid[j];
        }
        latent[l] = logistic(s);
    }
    let mut back = vec![0.0; h1];
    for j in 0..h1 {
        let mut s = m.layer2.a[j];
        for l in 0..h2 {
            s += m.layer2.w[[j, l]] * latent[l];
        }
        back[j] = logistic(s);
    }
    let mut vhat = vec![0.0; k];
    let mut eps = 0.0;
    for i in 0..k {
        let mut s = m.layer1.a[i];
        for j in 0..h1 {
            s += m.layer1.w[[i, j]] * back[j];
        }
        vhat[i] = logistic(s);
        eps += (vhat[i] - dense[i]).abs();
    }
    (latent, vhat, eps)
}
