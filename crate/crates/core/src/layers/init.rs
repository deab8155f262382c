use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform on `[-range, range]`.
    Uniform { range: f64 },
    /// Zero-mean Gaussian with standard deviation `std`.
    Normal { std: f64 },
    /// Random matrix with orthonormal rows or columns, whichever are fewer.
    Orthogonal,
}

impl InitScheme {
    pub fn sample<R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        match *self {
            InitScheme::Uniform { range } => {
                if !(range > 0.0 && range.is_finite()) {
                    return Err(contract!("uniform init range must be positive, got {}", range));
                }
                let dist = Uniform::new_inclusive(-range, range);
                Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
            }
            InitScheme::Normal { std } => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| contract!("invalid normal init std {}: {}", std, e))?;
                Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
            }
            InitScheme::Orthogonal => orthogonal(shape, rng),
        }
    }
}

/// Deterministic initialisation from a seed.
pub fn init_weights(scheme: InitScheme, shape: &[usize], seed: u64) -> Result<Tensor> {
    scheme.sample(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Gram-Schmidt on Gaussian vectors, two passes per vector.
fn orthogonal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    let &[rows, cols] = shape else {
        return Err(contract!("orthogonal init needs a 2-d shape, got {:?}", shape));
    };
    if rows == 0 || cols == 0 {
        return Err(contract!("orthogonal init on empty shape {:?}", shape));
    }
    let (count, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= dot * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Resample the (practically impossible) degenerate draw.
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for (k, q) in basis.iter().enumerate() {
        for (i, &x) in q.iter().enumerate() {
            if rows >= cols {
                data[i * cols + k] = x;
            } else {
                data[k * cols + i] = x;
            }
        }
    }
    Tensor::new([rows, cols], data)
}
