//! PSD projection of small Hermitian blocks in the flattened coordinates,
//! by cyclic complex Jacobi on stack arrays.

use nalgebra::Complex;

pub(super) const MAX_DIM: usize = 4;

type C = Complex<f64>;
type Block = [[C; MAX_DIM]; MAX_DIM];

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);
const SWEEPS: usize = 30;

fn unpack(v: &[f64], n: usize) -> Block {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut h = [[ZERO; MAX_DIM]; MAX_DIM];
    for i in 0..n {
        h[i][i] = C::new(v[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            let z = C::new(s * v[k], s * v[k + 1]);
            h[i][j] = z;
            h[j][i] = z.conj();
            k += 2;
        }
    }
    h
}

fn pack(h: &Block, n: usize, out: &mut [f64]) {
    let s = std::f64::consts::SQRT_2;
    for i in 0..n {
        out[i] = h[i][i].re;
    }
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            out[k] = s * h[i][j].re;
            out[k + 1] = s * h[i][j].im;
            k += 2;
        }
    }
}

/// Eigenvalues and eigenvectors (as columns of the returned block).
fn jacobi(mut h: Block, n: usize) -> ([f64; MAX_DIM], Block) {
    let mut v = [[ZERO; MAX_DIM]; MAX_DIM];
    for (i, row) in v.iter_mut().enumerate().take(n) {
        row[i] = ONE;
    }
    let scale: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| h[i][j].norm_sqr()).sum::<f64>();
    let floor = (f64::EPSILON * f64::EPSILON) * scale;
    for _ in 0..SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| h[i][j].norm_sqr()).sum();
        if off <= floor {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = h[p][q].norm();
                if b == 0.0 {
                    continue;
                }
                let phase = h[p][q] / b;
                let tau = (h[q][q].re - h[p][p].re) / (2.0 * b);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U = diag(1, conj(phase)) · [[c, s], [-s, c]] on (p, q).
                let e = phase.conj();
                let (upp, upq, uqp, uqq) = (C::new(c, 0.0), C::new(s, 0.0), e * (-s), e * c);
                for row in h.iter_mut().take(n) {
                    let (a, b) = (row[p], row[q]);
                    row[p] = a * upp + b * uqp;
                    row[q] = a * upq + b * uqq;
                }
                for j in 0..n {
                    let (a, b) = (h[p][j], h[q][j]);
                    h[p][j] = upp.conj() * a + uqp.conj() * b;
                    h[q][j] = upq.conj() * a + uqq.conj() * b;
                }
                h[p][q] = ZERO;
                h[q][p] = ZERO;
                h[p][p].im = 0.0;
                h[q][q].im = 0.0;
                for row in v.iter_mut().take(n) {
                    let (a, b) = (row[p], row[q]);
                    row[p] = a * upp + b * uqp;
                    row[q] = a * upq + b * uqq;
                }
            }
        }
    }
    let mut w = [0.0; MAX_DIM];
    for i in 0..n {
        w[i] = h[i][i].re;
    }
    (w, v)
}

/// Writes the PSD part of the block stored in `seg` into `dst`.
pub(super) fn project_psd_flat(seg: &[f64], n: usize, dst: &mut [f64]) {
    debug_assert!(n <= MAX_DIM);
    let (w, v) = jacobi(unpack(seg, n), n);
    let mut out = [[ZERO; MAX_DIM]; MAX_DIM];
    for k in (0..n).filter(|&k| w[k] > 0.0) {
        for i in 0..n {
            let a = v[i][k] * w[k];
            for j in i..n {
                out[i][j] += a * v[j][k].conj();
            }
        }
    }
    pack(&out, n, dst);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::{herm_to_vec, project_psd};
    use crate::fixtures::random_complex_matrix;
    use crate::operator::{hermitize, real_diag, Tolerance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=MAX_DIM {
            for _ in 0..300 {
                let h = hermitize(&random_complex_matrix(&mut rng, n, n));
                let mut seg = vec![0.0; n * n];
                herm_to_vec(&h, &mut seg);
                let mut fast = vec![0.0; n * n];
                project_psd_flat(&seg, n, &mut fast);
                let mut dense = vec![0.0; n * n];
                herm_to_vec(&project_psd(&h, None, &Tolerance::default()).unwrap(), &mut dense);
                let err = fast.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "n={n} err={err:e}");
            }
        }
    }

    #[test]
    fn degenerate_and_diagonal_blocks() {
        for m in [real_diag(&[1.0, -1.0, 0.0]), real_diag(&[2.0, 2.0, -3.0]), real_diag(&[0.0, 0.0, 0.0])] {
            let mut seg = vec![0.0; 9];
            herm_to_vec(&m, &mut seg);
            let mut out = vec![0.0; 9];
            project_psd_flat(&seg, 3, &mut out);
            let want: Vec<f64> = seg.iter().map(|&x| x.max(0.0)).collect();
            assert_eq!(out, want);
        }
    }
}
