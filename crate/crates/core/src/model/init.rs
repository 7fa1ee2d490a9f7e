use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Variant};
use crate::tensor::{ParameterSet, Result, Tensor};

enum Kind {
    /// Uniform ±sqrt(6/(fan_in+fan_out)).
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

struct Builder {
    params: ParameterSet,
    rng: Option<ChaCha8Rng>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, kind: Kind) -> Result<()> {
        let len: usize = shape.iter().product();
        let data = match (&mut self.rng, kind) {
            (Some(rng), Kind::Weight { fan_in, fan_out }) => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            _ => vec![0.0; len],
        };
        self.params.push(name, Tensor::new(shape, data)?)
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Result<()> {
        self.add(
            name,
            vec![rows, cols],
            Kind::Weight {
                fan_in: rows,
                fan_out: cols,
            },
        )
    }

    fn bias(&mut self, name: String, len: usize) -> Result<()> {
        self.add(name, vec![len], Kind::Bias)
    }
}

/// Parameters in canonical order; zero-filled when `seed` is `None`.
///
/// Matrices are stored input-major (`[in, out]`) so that layers compute
/// `x · W` on row vectors.
pub(super) fn build(c: &ModelConfig, seed: Option<u64>) -> Result<ParameterSet> {
    let mut b = Builder {
        params: ParameterSet::new(),
        rng: seed.map(ChaCha8Rng::seed_from_u64),
    };
    let (n, e, ep, h) = (c.n_attributes, c.embed_dim, c.gat_dim, c.hidden);
    match c.variant {
        Variant::Gam | Variant::GamTa => {
            // Each row is one attribute's scalar-to-E map.
            b.add(
                "embed.w".into(),
                vec![n, e],
                Kind::Weight { fan_in: 1, fan_out: e },
            )?;
            b.add("embed.b".into(), vec![n, e], Kind::Bias)?;
            for l in 0..c.layers {
                let input = if l == 0 { e } else { ep };
                for m in 0..c.heads {
                    b.matrix(format!("gat.{l}.{m}.w"), input, ep)?;
                    b.matrix(format!("gat.{l}.{m}.a_src"), ep, 1)?;
                    b.matrix(format!("gat.{l}.{m}.a_dst"), ep, 1)?;
                }
            }
            gru(&mut b, n * ep, h)?;
            if c.variant == Variant::GamTa {
                b.add("ta.time_w".into(), vec![ep], Kind::Weight { fan_in: 1, fan_out: ep })?;
                b.bias("ta.time_b".into(), ep)?;
                b.matrix("ta.w".into(), ep, ep)?;
            }
        }
        Variant::GruGlucoseOnly => gru(&mut b, 1, h)?,
        Variant::Lstm => {
            for g in ["i", "f", "j", "o"] {
                b.matrix(format!("lstm.w_x{g}"), n, h)?;
                b.bias(format!("lstm.b_x{g}"), h)?;
                b.matrix(format!("lstm.w_h{g}"), h, h)?;
                b.bias(format!("lstm.b_h{g}"), h)?;
            }
        }
    }
    b.matrix("out.w".into(), h, 1)?;
    b.bias("out.b".into(), 1)?;
    Ok(b.params)
}

fn gru(b: &mut Builder, input: usize, h: usize) -> Result<()> {
    for k in 1..=6 {
        let rows = if k % 2 == 1 { input } else { h };
        b.matrix(format!("gru.w{k}"), rows, h)?;
        b.bias(format!("gru.b{k}"), h)?;
    }
    Ok(())
}
