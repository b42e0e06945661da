use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, Parameters, Scalar, Tape, Var};

/// Negative slope used by every activation in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Fully connected layer `x W + b` applied row-wise.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        params: &mut Parameters<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = params.insert_glorot(format!("{name}.w"), fan_in, fan_out, rng)?;
        let bias = if with_bias {
            Some(params.insert_zeros(format!("{name}.b"), vec![fan_out])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Parameters<T>, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(params, b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }

    /// `leaky_relu(x W + b)`
    pub fn forward_act<T: Scalar>(&self, tape: &mut Tape<T>, params: &Parameters<T>, x: Var) -> Result<Var> {
        let y = self.forward(tape, params, x)?;
        Ok(tape.leaky_relu(y, T::from_f64(LEAKY_SLOPE)))
    }
}

/// splitmix64 finalizer; derives independent sub-seeds from one seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
