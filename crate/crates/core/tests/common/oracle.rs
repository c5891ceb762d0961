//! Loop-based re-computations used as independent oracles.

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

/// `(1/N) Σ_i Σ_j (f_ij − c_j)² + (λ/2) Σ w²`.
pub fn svdd_objective(features: &Mat, c: &[f64], weights: &[f64], lambda: f64) -> f64 {
    let mut dist = 0.0;
    for f in features {
        for (j, v) in f.iter().enumerate() {
            dist += (v - c[j]) * (v - c[j]);
        }
    }
    let mut sq = 0.0;
    for w in weights {
        sq += w * w;
    }
    dist / features.len() as f64 + 0.5 * lambda * sq
}

/// `(1/N) Σ_i Σ_e (x_ie − x̂_ie)²` over flattened clips.
pub fn recon_objective(x: &[Vec<f64>], xhat: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (a, b) in x.iter().zip(xhat) {
        for e in 0..a.len() {
            total += (a[e] - b[e]) * (a[e] - b[e]);
        }
    }
    total / x.len() as f64
}

/// `G_ij = exp(⟨P_i W, P_j W'⟩) / Σ_k exp(⟨P_i W, P_k W'⟩)`.
pub fn similarity_graph(p: &Mat, w: &Mat, w_prime: &Mat) -> Mat {
    let k = p.len();
    let a = matmul(p, w);
    let b = matmul(p, w_prime);
    let mut g = vec![vec![0.0; k]; k];
    for i in 0..k {
        let mut denom = 0.0;
        for j in 0..k {
            let mut s = 0.0;
            for t in 0..a[i].len() {
                s += a[i][t] * b[j][t];
            }
            g[i][j] = s.exp();
            denom += g[i][j];
        }
        for j in 0..k {
            g[i][j] /= denom;
        }
    }
    g
}

/// `G ReLU(G P W₀) W₁`.
pub fn gcn(g: &Mat, p: &Mat, w0: &Mat, w1: &Mat) -> Mat {
    let mut h1 = matmul(&matmul(g, p), w0);
    for row in &mut h1 {
        for v in row {
            *v = v.max(0.0);
        }
    }
    matmul(&matmul(g, &h1), w1)
}

/// `(a_i − min) / (max − min)`, zeros for a constant series.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let mut lo = raw[0];
    let mut hi = raw[0];
    for &v in raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    raw.iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Pairwise AUC with half credit for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                credit += 1.0;
            } else if si == sj {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

pub fn to_mat(a: &ndarray::Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}
