//! Hadamard matrices and transforms.
//!
//! Power-of-two orders come from the Sylvester construction and are applied
//! with an in-place butterfly network. Other orders use the Paley-I
//! construction (`q + 1` for a prime `q ≡ 3 mod 4`), optionally doubled by
//! Sylvester steps. A [`HadamardPlan`] applies `H_pot ⊗ H_small`, which is how
//! a 5120-wide activation is rotated with a 128-point FHT and a 40-point
//! dense ±1 product.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Largest Sylvester order materialized densely (2^14 × 2^14 entries).
pub const MAX_DENSE_LOG2: u32 = 14;

/// Square matrix with entries in {+1, -1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignMatrix {
    order: usize,
    entries: Vec<i8>,
}

impl SignMatrix {
    pub fn from_entries(order: usize, entries: Vec<i8>) -> Result<Self> {
        if entries.len() != order * order {
            return Err(dim_err(
                "sign_matrix",
                format!("{} entries for order {order}", entries.len()),
            ));
        }
        if entries.iter().any(|&e| e != 1 && e != -1) {
            return Err(dim_err("sign_matrix", "entries must be +1 or -1"));
        }
        Ok(SignMatrix { order, entries })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.order + j]
    }

    /// Integer Gram matrix `H·Hᵀ`.
    pub fn gram(&self) -> Vec<i64> {
        let n = self.order;
        let mut g = vec![0i64; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..n)
                    .map(|k| i64::from(self.get(i, k)) * i64::from(self.get(j, k)))
                    .sum();
            }
        }
        g
    }

    /// True when `H·Hᵀ == order·I` exactly.
    pub fn is_hadamard(&self) -> bool {
        let n = self.order;
        self.gram()
            .iter()
            .enumerate()
            .all(|(idx, &v)| v == if idx / n == idx % n { n as i64 } else { 0 })
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.order;
        (0..n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.order, self.order],
            self.entries.iter().map(|&e| f64::from(e)).collect(),
        )
        .expect("sign matrix is square and finite")
    }

    /// Sylvester doubling `[[H, H], [H, -H]]`.
    fn doubled(&self) -> SignMatrix {
        let n = self.order;
        let mut out = vec![0i8; 4 * n * n];
        for i in 0..n {
            for j in 0..n {
                let v = self.get(i, j);
                out[i * 2 * n + j] = v;
                out[i * 2 * n + n + j] = v;
                out[(n + i) * 2 * n + j] = v;
                out[(n + i) * 2 * n + n + j] = -v;
            }
        }
        SignMatrix {
            order: 2 * n,
            entries: out,
        }
    }
}

/// Sylvester Hadamard matrix of order `2^k`.
pub fn sylvester(k: u32) -> Result<SignMatrix> {
    if k > MAX_DENSE_LOG2 {
        return Err(Error::Capacity(k));
    }
    let n = 1usize << k;
    let entries = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if (i & j).count_ones() % 2 == 0 {
                1
            } else {
                -1
            }
        })
        .collect();
    Ok(SignMatrix { order: n, entries })
}

fn is_prime(q: usize) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Splits `m = (q + 1)·2^j` with `q` prime, `q ≡ 3 (mod 4)`, using the fewest
/// doublings. Returns `None` for powers of two and unsupported orders.
fn paley_decomposition(m: usize) -> Option<(usize, u32)> {
    if m < 2 || m.is_power_of_two() {
        return None;
    }
    let mut base = m;
    let mut doublings = 0;
    loop {
        let q = base - 1;
        if q % 4 == 3 && is_prime(q) && !base.is_power_of_two() {
            return Some((q, doublings));
        }
        if !base.is_multiple_of(2) || base < 4 {
            return None;
        }
        base /= 2;
        doublings += 1;
    }
}

pub fn is_supported_small_order(m: usize) -> bool {
    m == 1 || paley_decomposition(m).is_some()
}

fn paley_one(q: usize) -> SignMatrix {
    let mut residue = vec![false; q];
    for x in 1..q {
        residue[(x * x) % q] = true;
    }
    let chi = |a: usize| -> i8 {
        if a == 0 {
            0
        } else if residue[a] {
            1
        } else {
            -1
        }
    };
    let n = q + 1;
    let mut entries = vec![0i8; n * n];
    // H = I + S with S = [[0, 1ᵀ], [-1, Q]], Q[i][j] = χ(j - i).
    for i in 0..n {
        for j in 0..n {
            let s = match (i, j) {
                (0, 0) => 0,
                (0, _) => 1,
                (_, 0) => -1,
                _ => chi((j + q - i) % q),
            };
            entries[i * n + j] = s + i8::from(i == j);
        }
    }
    SignMatrix { order: n, entries }
}

/// Hadamard matrix of a non-power-of-two order (Paley-I, then doubled).
pub fn hadamard_nonpot(m: usize) -> Result<SignMatrix> {
    let (q, doublings) = paley_decomposition(m).ok_or(Error::UnsupportedSize(m))?;
    let mut h = paley_one(q);
    for _ in 0..doublings {
        h = h.doubled();
    }
    Ok(h)
}

/// In-place unnormalized Walsh-Hadamard transform (natural order), equal to
/// `sylvester(log2 n) · v`.
pub fn fwht_in_place(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(dim_err("fwht", format!("length {n} is not a power of two")));
    }
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    Ok(())
}

pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// Factorized rotation `(H_pot ⊗ H_small) / sqrt(n)` over rows of width
/// `n_total = pot_size · small_size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HadamardPlan {
    n_total: usize,
    pot_size: usize,
    small_size: usize,
    small_matrix: SignMatrix,
    normalize: bool,
}

impl HadamardPlan {
    pub fn new(pot_size: usize, small_size: usize) -> Result<Self> {
        if pot_size == 0 || !pot_size.is_power_of_two() {
            return Err(dim_err(
                "hadamard_plan",
                format!("pot size {pot_size} is not a power of two"),
            ));
        }
        let small_matrix = if small_size == 1 {
            SignMatrix {
                order: 1,
                entries: vec![1],
            }
        } else {
            hadamard_nonpot(small_size)?
        };
        Ok(HadamardPlan {
            n_total: pot_size * small_size,
            pot_size,
            small_size,
            small_matrix,
            normalize: true,
        })
    }

    pub fn identity() -> Self {
        HadamardPlan::new(1, 1).expect("trivial plan")
    }

    /// Chooses the factorization `n = 2^k · m` with the largest supported
    /// small order `m` such that `2^k >= m`. `n = 5120` gives (128, 40).
    pub fn for_dim(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::RotationPlan(n));
        }
        if n.is_power_of_two() {
            return HadamardPlan::new(n, 1);
        }
        let mut best = None;
        let mut pot = 1;
        while pot <= n {
            if n.is_multiple_of(pot) {
                let m = n / pot;
                if pot >= m && paley_decomposition(m).is_some() {
                    best = Some((pot, m));
                    // larger pot means smaller m; keep the first (largest m)
                    break;
                }
            }
            pot *= 2;
        }
        let (pot, m) = best.ok_or(Error::RotationPlan(n))?;
        HadamardPlan::new(pot, m)
    }

    /// Disables the final `1/sqrt(n)` scaling.
    pub fn unnormalized(mut self) -> Self {
        self.normalize = false;
        self
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn pot_size(&self) -> usize {
        self.pot_size
    }

    pub fn small_size(&self) -> usize {
        self.small_size
    }

    pub fn small_matrix(&self) -> &SignMatrix {
        &self.small_matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalize
    }

    pub fn is_identity(&self) -> bool {
        self.n_total == 1
    }

    /// `Qᵀ = Q` when the small factor is symmetric (Sylvester is).
    pub fn is_symmetric(&self) -> bool {
        self.small_matrix.is_symmetric()
    }

    /// Computes `row · Q` in place.
    pub fn rotate_row(&self, row: &mut [f64]) -> Result<()> {
        self.apply(row, false)
    }

    /// Computes `row · Qᵀ` in place (the inverse rotation when normalized).
    pub fn rotate_row_transposed(&self, row: &mut [f64]) -> Result<()> {
        self.apply(row, true)
    }

    fn apply(&self, row: &mut [f64], transpose: bool) -> Result<()> {
        if row.len() != self.n_total {
            return Err(dim_err(
                "apply_rotation",
                format!("row of {} vs plan of {}", row.len(), self.n_total),
            ));
        }
        let (p, m) = (self.pot_size, self.small_size);
        if p > 1 {
            let mut col = vec![0.0; p];
            for b in 0..m {
                for a in 0..p {
                    col[a] = row[a * m + b];
                }
                fwht_in_place(&mut col)?;
                for a in 0..p {
                    row[a * m + b] = col[a];
                }
            }
        }
        if m > 1 {
            let h = &self.small_matrix;
            let mut tmp = vec![0.0; m];
            for chunk in row.chunks_exact_mut(m) {
                for (out_idx, t) in tmp.iter_mut().enumerate() {
                    *t = chunk
                        .iter()
                        .enumerate()
                        .map(|(in_idx, &v)| {
                            let s = if transpose {
                                h.get(out_idx, in_idx)
                            } else {
                                h.get(in_idx, out_idx)
                            };
                            if s > 0 {
                                v
                            } else {
                                -v
                            }
                        })
                        .sum();
                }
                chunk.copy_from_slice(&tmp);
            }
        }
        if self.normalize && self.n_total > 1 {
            let scale = 1.0 / (self.n_total as f64).sqrt();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(())
    }

    /// Dense `n × n` rotation matrix (tests and small fusions only).
    pub fn dense(&self) -> Result<Tensor> {
        let n = self.n_total;
        let mut out = Tensor::identity(n);
        for r in 0..n {
            self.rotate_row(out.row_mut(r))?;
        }
        Ok(out)
    }
}

/// Applies `x · Q` to every row of `x`.
pub fn apply_rotation(x: &Tensor, plan: &HadamardPlan) -> Result<Tensor> {
    if x.last_dim() != plan.n_total() {
        return Err(dim_err(
            "apply_rotation",
            format!("last dim {} vs plan {}", x.last_dim(), plan.n_total()),
        ));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        plan.rotate_row(out.row_mut(r))?;
    }
    Ok(out)
}

/// Applies `x · Qᵀ` to every row of `x`.
pub fn apply_rotation_transposed(x: &Tensor, plan: &HadamardPlan) -> Result<Tensor> {
    if x.last_dim() != plan.n_total() {
        return Err(dim_err(
            "apply_rotation",
            format!("last dim {} vs plan {}", x.last_dim(), plan.n_total()),
        ));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        plan.rotate_row_transposed(out.row_mut(r))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{l2_norm, matmul};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Dense Kronecker oracle: entries built directly from the two factors.
    fn kron_dense(plan: &HadamardPlan) -> Tensor {
        let (p, m) = (plan.pot_size(), plan.small_size());
        let hp = sylvester(p.trailing_zeros()).unwrap();
        let hs = plan.small_matrix();
        let n = p * m;
        let norm = 1.0 / (n as f64).sqrt();
        let mut data = vec![0.0; n * n];
        for a in 0..p {
            for b in 0..m {
                for a2 in 0..p {
                    for b2 in 0..m {
                        let v = f64::from(hp.get(a, a2)) * f64::from(hs.get(b, b2));
                        data[(a * m + b) * n + a2 * m + b2] = v * norm;
                    }
                }
            }
        }
        Tensor::new(vec![n, n], data).unwrap()
    }

    #[test]
    fn sylvester_small_orders() {
        assert_eq!(sylvester(0).unwrap().entries(), &[1]);
        assert_eq!(sylvester(1).unwrap().entries(), &[1, 1, 1, -1]);
        let h7 = sylvester(7).unwrap();
        assert_eq!(h7.order(), 128);
        assert!(h7.is_hadamard());
        assert!(h7.is_symmetric());
        assert!(matches!(
            sylvester(MAX_DENSE_LOG2 + 1),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn paley_orders_are_hadamard() {
        for m in [12, 20, 24, 40, 44] {
            let h = hadamard_nonpot(m).unwrap();
            assert_eq!(h.order(), m);
            assert!(h.is_hadamard(), "order {m}");
        }
    }

    #[test]
    fn unsupported_orders() {
        for m in [13, 3, 6, 10, 8, 28] {
            assert!(
                matches!(hadamard_nonpot(m), Err(Error::UnsupportedSize(_))),
                "order {m}"
            );
        }
    }

    #[test]
    fn fwht_examples() {
        assert_eq!(fwht(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0; 4]);
        assert_eq!(fwht(&[1.0; 4]).unwrap(), vec![4.0, 0.0, 0.0, 0.0]);
        assert!(fwht(&[1.0; 6]).is_err());
    }

    #[test]
    fn fwht_matches_dense_sylvester() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_vec(128, &mut rng);
        let h = sylvester(7).unwrap().to_tensor();
        let dense = matmul(&h, &Tensor::new(vec![128, 1], v.clone()).unwrap()).unwrap();
        let fast = fwht(&v).unwrap();
        for (a, b) in fast.iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn plan_two_point() {
        let plan = HadamardPlan::new(2, 1).unwrap();
        let y = apply_rotation(&Tensor::from_vec(vec![1.0, 0.0]).unwrap(), &plan).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((y.data()[0] - r).abs() < 1e-15 && (y.data()[1] - r).abs() < 1e-15);
    }

    #[test]
    fn plan_matches_kronecker_oracle_8x12() {
        let plan = HadamardPlan::new(8, 12).unwrap();
        let q = kron_dense(&plan);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(vec![3, 96], random_vec(3 * 96, &mut rng)).unwrap();
        let fast = apply_rotation(&x, &plan).unwrap();
        let dense = matmul(&x, &q).unwrap();
        assert!(fast.max_abs_diff(&dense) < 1e-12);

        let fast_t = apply_rotation_transposed(&x, &plan).unwrap();
        let dense_t = matmul(&x, &q.transpose().unwrap()).unwrap();
        assert!(fast_t.max_abs_diff(&dense_t) < 1e-12);
    }

    #[test]
    fn plan_5120_spot_check() {
        let plan = HadamardPlan::for_dim(5120).unwrap();
        assert_eq!((plan.pot_size(), plan.small_size()), (128, 40));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_vec(5120, &mut rng);
        let mut y = x.clone();
        plan.rotate_row(&mut y).unwrap();
        let hs = plan.small_matrix();
        let norm = 1.0 / 5120f64.sqrt();
        for &j in &[0usize, 1, 39, 40, 2047, 5119] {
            let (a2, b2) = (j / 40, j % 40);
            let mut acc = 0.0;
            for (i, xi) in x.iter().enumerate() {
                let (a, b) = (i / 40, i % 40);
                let hp = if (a & a2).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                acc += xi * hp * f64::from(hs.get(b, b2));
            }
            assert!((y[j] - acc * norm).abs() < 1e-6, "column {j}");
        }
        assert!((l2_norm(&y) - l2_norm(&x)).abs() < 1e-9 * l2_norm(&x));
    }

    #[test]
    fn plan_selection() {
        assert_eq!(HadamardPlan::for_dim(64).unwrap().small_size(), 1);
        assert!(matches!(
            HadamardPlan::for_dim(96),
            Err(Error::RotationPlan(96))
        ));
        let p = HadamardPlan::for_dim(2560).unwrap();
        assert_eq!((p.pot_size(), p.small_size()), (64, 40));
        assert!(HadamardPlan::for_dim(1).unwrap().is_identity());
    }

    #[test]
    fn symmetric_plan_is_involution() {
        let plan = HadamardPlan::new(16, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(16, &mut rng);
        let mut y = x.clone();
        plan.rotate_row(&mut y).unwrap();
        plan.rotate_row(&mut y).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_is_flattened() {
        for n in [4usize, 16, 96, 640] {
            let plan = if n == 96 {
                HadamardPlan::new(8, 12).unwrap()
            } else {
                HadamardPlan::for_dim(n).unwrap()
            };
            let mut x = vec![0.0; n];
            x[n / 3] = 50.0;
            plan.rotate_row(&mut x).unwrap();
            let expect = 50.0 / (n as f64).sqrt();
            assert!(
                x.iter().all(|v| (v.abs() - expect).abs() < 1e-12),
                "n = {n}"
            );
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(seed in any::<u64>(), which in 0usize..4) {
            let plan = match which {
                0 => HadamardPlan::new(32, 1).unwrap(),
                1 => HadamardPlan::new(4, 12).unwrap(),
                2 => HadamardPlan::new(8, 20).unwrap(),
                _ => HadamardPlan::new(2, 40).unwrap(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_vec(plan.n_total(), &mut rng);
            let mut y = x.clone();
            plan.rotate_row(&mut y).unwrap();
            let nx = l2_norm(&x);
            prop_assert!((l2_norm(&y) - nx).abs() <= 1e-9 * nx);
            plan.rotate_row_transposed(&mut y).unwrap();
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn double_fwht_scales_by_n(k in 0u32..11, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_vec(1 << k, &mut rng);
            let twice = fwht(&fwht(&v).unwrap()).unwrap();
            let n = (1u64 << k) as f64;
            for (a, b) in twice.iter().zip(&v) {
                prop_assert!((a - n * b).abs() <= 1e-9 * n.max(1.0));
            }
        }
    }
}
