use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;

use crate::activations::ActivationKind;
use crate::error::{contract, Result};
use crate::layers::{InitScheme, SimpleRnnCell};
use crate::tensor::{Tape, Tensor};

/// Family the recurrent matrix `W = rho · Q` is drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MatrixFamily {
    /// Haar-distributed orthogonal `Q`.
    #[default]
    Orthogonal,
    /// `Q` a uniformly random permutation matrix (orthogonal and non-negative).
    Permutation,
}

impl std::str::FromStr for MatrixFamily {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(Self::Orthogonal),
            "permutation" => Ok(Self::Permutation),
            other => Err(contract!("unknown matrix family {other:?} (orthogonal or permutation)")),
        }
    }
}

/// Norms of `h_0 .. h_T` of an input-free simple RNN.
#[derive(Clone, Debug, PartialEq)]
pub struct NormTrajectory {
    pub l2: Vec<f64>,
    /// Largest coordinate magnitude per step.
    pub max_abs: Vec<f64>,
}

impl NormTrajectory {
    pub fn growth(&self) -> f64 {
        self.l2.last().copied().unwrap_or(0.0) / self.l2[0]
    }
}

/// Rolls `h_t = g(h_{t-1}·W)` forward `steps` times from `h0`.
pub fn rollout(activation: ActivationKind, recurrent: Tensor, h0: Tensor, steps: usize) -> Result<NormTrajectory> {
    let (d, _) = recurrent.dims2()?;
    if h0.shape() != [d] {
        return Err(contract!("h0 must have {} entries, got shape {:?}", d, h0.shape()));
    }
    let cell = SimpleRnnCell::from_weights(
        "demo",
        recurrent,
        Tensor::zeros([1, d]),
        Tensor::zeros([d]),
        activation,
    )?;
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros([1, steps, 1]));
    let h0v = tape.constant(h0.reshape([1, d])?);
    let hs = cell.forward(&tape, x, h0v)?;
    let mut l2 = vec![h0.norm_l2()];
    let mut max_abs = vec![h0.max_abs()];
    for h in hs {
        let v = h.value();
        l2.push(v.norm_l2());
        max_abs.push(v.max_abs());
    }
    Ok(NormTrajectory { l2, max_abs })
}

/// Simple RNN with `W = rho · Q`, zero input and bias, and `h_0` uniform on
/// `(0, 1)`; returns the norm of every hidden state.
pub fn exploding_state_demo(
    activation: ActivationKind,
    rho: f64,
    steps: usize,
    dim: usize,
    family: MatrixFamily,
    seed: u64,
) -> Result<NormTrajectory> {
    if !(rho > 0.0) || steps == 0 || dim == 0 {
        return Err(contract!("need rho > 0, steps >= 1 and dim >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = match family {
        MatrixFamily::Orthogonal => InitScheme::Orthogonal.sample(&[dim, dim], &mut rng)?,
        MatrixFamily::Permutation => {
            let mut perm: Vec<usize> = (0..dim).collect();
            perm.shuffle(&mut rng);
            let mut m = Tensor::zeros([dim, dim]);
            for (i, &j) in perm.iter().enumerate() {
                m.data_mut()[i * dim + j] = 1.0;
            }
            m
        }
    };
    w.scale(rho);
    let h0 = Tensor::new([dim], (0..dim).map(|_| rng.gen_range(f64::EPSILON..1.0)).collect())?;
    rollout(activation, w, h0, steps)
}
