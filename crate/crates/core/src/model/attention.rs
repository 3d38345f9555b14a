use crate::error::{invalid, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Parameter names of one attention block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub heads: usize,
}

impl AttentionParams {
    pub fn with_prefix(prefix: &str, heads: usize) -> Self {
        Self {
            wq: format!("{prefix}.wq"),
            wk: format!("{prefix}.wk"),
            wv: format!("{prefix}.wv"),
            wo: format!("{prefix}.wo"),
            heads,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `[Q, D]`
    pub output: Var,
    /// One `[Q, S]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention with an output projection.
/// Projections carry no bias.
pub fn cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    queries: Var,
    keys: Var,
    values: Var,
) -> Result<AttentionOutput> {
    let d = tape.value(queries).cols();
    let (kt, vt) = (tape.value(keys), tape.value(values));
    if kt.cols() != d || vt.cols() != d {
        return Err(invalid(format!(
            "attention width mismatch: queries {d}, keys {}, values {}",
            kt.cols(),
            vt.cols()
        )));
    }
    if kt.rows() != vt.rows() || kt.rows() == 0 {
        return Err(invalid(format!(
            "attention needs matching non-empty keys and values, got {} and {}",
            kt.rows(),
            vt.rows()
        )));
    }
    let h = params.heads;
    if h == 0 || d % h != 0 {
        return Err(invalid(format!("width {d} not divisible by {h} heads")));
    }
    let dh = d / h;
    let wq = tape.param(store, &params.wq)?;
    let wk = tape.param(store, &params.wk)?;
    let wv = tape.param(store, &params.wv)?;
    let wo = tape.param(store, &params.wo)?;
    let q = tape.matmul(queries, wq)?;
    let k = tape.matmul(keys, wk)?;
    let v = tape.matmul(values, wv)?;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(h);
    let mut weights = Vec::with_capacity(h);
    for i in 0..h {
        let qh = tape.slice_cols(q, i * dh, dh)?;
        let kh = tape.slice_cols(k, i * dh, dh)?;
        let vh = tape.slice_cols(v, i * dh, dh)?;
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, inv);
        let a = tape.softmax(scores);
        heads.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let joined = if h == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let output = tape.matmul(joined, wo)?;
    Ok(AttentionOutput { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{glorot, uniform, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, heads: usize) -> (ParamStore, AttentionParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::with_prefix("att", heads);
        let mut store = ParamStore::new();
        for name in [&p.wq, &p.wk, &p.wv, &p.wo] {
            store.insert(name.clone(), glorot(&mut rng, d, d)).unwrap();
        }
        (store, p, rng)
    }

    fn project(store: &ParamStore, p: &AttentionParams, row: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(row.to_vec()));
        let wv = tape.param(store, &p.wv).unwrap();
        let wo = tape.param(store, &p.wo).unwrap();
        let y = tape.matmul(x, wv).unwrap();
        let y = tape.matmul(y, wo).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn single_key_returns_projected_value() {
        let (store, p, mut rng) = setup(8, 2);
        let value = uniform(&mut rng, &[1, 8], 1.0);
        let want = project(&store, &p, value.data());
        for _ in 0..3 {
            let mut tape = Tape::new();
            let q = tape.constant(uniform(&mut rng, &[1, 8], 3.0));
            let k = tape.constant(uniform(&mut rng, &[1, 8], 1.0));
            let v = tape.constant(value.clone());
            let out = cross_attention(&mut tape, &store, &p, q, k, v).unwrap();
            for (a, b) in tape.value(out.output).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_keys_average_the_values() {
        let (store, p, mut rng) = setup(8, 4);
        let key = uniform(&mut rng, &[1, 8], 1.0);
        let values = uniform(&mut rng, &[3, 8], 1.0);
        let mut tape = Tape::new();
        let q = tape.constant(uniform(&mut rng, &[2, 8], 1.0));
        let k = tape.constant(Tensor::matrix(3, 8, key.data().repeat(3)).unwrap());
        let v = tape.constant(values.clone());
        let out = cross_attention(&mut tape, &store, &p, q, k, v).unwrap();
        let mean: Vec<f64> = (0..8)
            .map(|c| (0..3).map(|r| values.get(r, c)).sum::<f64>() / 3.0)
            .collect();
        let want = project(&store, &p, &mean);
        let got = tape.value(out.output);
        for r in 0..2 {
            for (a, b) in got.row_slice(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_are_row_stochastic() {
        let (store, p, mut rng) = setup(12, 3);
        let mut tape = Tape::new();
        let q = tape.constant(uniform(&mut rng, &[2, 12], 2.0));
        let k = tape.constant(uniform(&mut rng, &[5, 12], 2.0));
        let v = tape.constant(uniform(&mut rng, &[5, 12], 2.0));
        let out = cross_attention(&mut tape, &store, &p, q, k, v).unwrap();
        assert_eq!(out.weights.len(), 3);
        for w in &out.weights {
            let t = tape.value(*w);
            for r in 0..t.rows() {
                assert!((t.row_slice(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (store, p, mut rng) = setup(8, 2);
        let mut tape = Tape::new();
        let q = tape.constant(uniform(&mut rng, &[1, 8], 1.0));
        let k = tape.constant(uniform(&mut rng, &[2, 8], 1.0));
        let v = tape.constant(uniform(&mut rng, &[3, 8], 1.0));
        assert!(cross_attention(&mut tape, &store, &p, q, k, v).is_err());
        let bad = AttentionParams::with_prefix("att", 3);
        assert!(cross_attention(&mut tape, &store, &bad, q, k, k).is_err());
    }
}
