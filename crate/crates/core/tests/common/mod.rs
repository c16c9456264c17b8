//! Straight-loop reference implementations shared by the integration tests.
//! They read raw parameter arrays and never touch the tape.

#![allow(dead_code)]

use tensorframe::ParamStore;

pub type M3 = [[f64; 3]; 3];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two-layer tanh perceptron.
pub fn mlp(p: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w1 = p.get(&format!("{prefix}.w1")).unwrap();
    let b1 = &p.get(&format!("{prefix}.b1")).unwrap().data;
    let w2 = p.get(&format!("{prefix}.w2")).unwrap();
    let b2 = &p.get(&format!("{prefix}.b2")).unwrap().data;
    assert_eq!(x.len(), w1.rows);
    let (h, o) = (w1.cols, w2.cols);
    let mut hid = vec![0.0; h];
    for k in 0..h {
        let mut acc = b1[k];
        for (i, xi) in x.iter().enumerate() {
            acc += xi * w1.data[i * h + k];
        }
        hid[k] = acc.tanh();
    }
    let mut out = vec![0.0; o];
    for m in 0..o {
        let mut acc = b2[m];
        for k in 0..h {
            acc += hid[k] * w2.data[k * o + m];
        }
        out[m] = acc;
    }
    out
}

pub fn gated(p: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    mlp(p, prefix, x).into_iter().map(sigmoid).collect()
}

pub fn matmul(a: &M3, b: &M3) -> M3 {
    let mut o = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                o[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    o
}

pub fn transpose(a: &M3) -> M3 {
    let mut o = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            o[r][c] = a[c][r];
        }
    }
    o
}

/// `(j, d²)` for every `j ≠ i` within the cutoff.
pub fn neighbours(pos: &[[f64; 3]], cutoff: f64) -> Vec<Vec<(usize, f64)>> {
    let n = pos.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, (0..3).map(|k| (pos[i][k] - pos[j][k]).powi(2)).sum::<f64>()))
                .filter(|&(_, d2)| d2 <= cutoff * cutoff)
                .collect()
        })
        .collect()
}

pub fn scalar_layer(p: &ParamStore, l: usize, s: &[Vec<f64>], pos: &[[f64; 3]], cutoff: f64) -> Vec<Vec<f64>> {
    let nb = neighbours(pos, cutoff);
    let cs = s[0].len();
    (0..s.len())
        .map(|i| {
            let mut agg = vec![0.0; cs];
            for &(j, d2) in &nb[i] {
                let mut inp = s[i].clone();
                inp.extend_from_slice(&s[j]);
                inp.push(d2);
                inp.push(1.0 / (d2 + 1e-8));
                let m = mlp(p, &format!("layer{l}.edge"), &inp);
                let g = gated(p, &format!("layer{l}.gate"), &m)[0];
                for c in 0..cs {
                    agg[c] += g * m[c];
                }
            }
            let mut inp = s[i].clone();
            inp.extend_from_slice(&agg);
            let u = mlp(p, &format!("layer{l}.update"), &inp);
            (0..cs).map(|c| s[i][c] + u[c]).collect()
        })
        .collect()
}

/// Vector (`block = 3`) or tensor (`block = 9`) message layer.
#[allow(clippy::too_many_arguments)]
pub fn mixing_layer(
    p: &ParamStore,
    l: usize,
    block: usize,
    s: &[Vec<f64>],
    x: &[Vec<f64>],
    frames: &[M3],
    pos: &[[f64; 3]],
    cutoff: f64,
) -> Vec<Vec<f64>> {
    let kind = if block == 3 { "vec" } else { "ten" };
    let nb = neighbours(pos, cutoff);
    let cand: Vec<Vec<f64>> = s.iter().map(|si| mlp(p, &format!("layer{l}.{kind}"), si)).collect();
    let c = cand[0].len() / block;
    let mut out = x.to_vec();
    for i in 0..s.len() {
        for &(j, _) in &nb[i] {
            let fij = matmul(&transpose(&frames[i]), &frames[j]);
            let mut u: Vec<Vec<f64>> = (0..c).map(|k| cand[i][k * block..(k + 1) * block].to_vec()).collect();
            for k in 0..c {
                let src = &cand[j][k * block..(k + 1) * block];
                let moved = if block == 3 {
                    (0..3).map(|r| (0..3).map(|q| fij[r][q] * src[q]).sum()).collect()
                } else {
                    let a = [[src[0], src[1], src[2]], [src[3], src[4], src[5]], [src[6], src[7], src[8]]];
                    matmul(&matmul(&fij, &a), &transpose(&fij)).iter().flatten().copied().collect()
                };
                u.push(moved);
            }
            let mut inp = s[i].clone();
            inp.extend_from_slice(&s[j]);
            let w = gated(p, &format!("layer{l}.{kind}_int"), &inp);
            for a in 0..c {
                for k in 0..2 * c {
                    for e in 0..block {
                        out[i][a * block + e] += w[a * 2 * c + k] * u[k][e];
                    }
                }
            }
        }
    }
    out
}

/// tensor, trace, aniso and Frobenius errors between two 3×3 tensors.
pub fn metrics(p: &M3, t: &M3) -> [f64; 4] {
    let (mut all, mut tr, mut off, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            let d = p[r][c] - t[r][c];
            all += d.abs();
            sq += d * d;
            if r == c {
                tr += d;
            } else {
                off += d.abs();
            }
        }
    }
    [all / 9.0, tr.abs(), off / 6.0, sq.sqrt()]
}
