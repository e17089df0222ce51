//! Self-attention local feature augmentation over the grid-point tokens
//! of one RoI.
//!
//! An offset-attention block computes
//! `ReLU(Norm(Linear(SelfAttention(x) − x))) + x`. The augmentator chains
//! `N` of them, concatenates the input with every block output and fuses
//! the `(N+1)·d` channels back to `d` with a linear + ReLU layer. Each
//! feature source gets its own augmentator and the results are
//! concatenated along channels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamSet, Tape, Var};

/// Parameters of one offset-attention block of width `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OaBlockParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub d: usize,
    pub eps: f64,
}

impl OaBlockParams {
    pub fn init<R: Rng>(params: &mut ParamSet, rng: &mut R, prefix: &str, d: usize, eps: f64) -> Self {
        let mut w = |n: &str| params.init_weight(rng, format!("{prefix}.{n}"), d, d);
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |n: &str| params.init_bias(rng, format!("{prefix}.{n}"), d, d);
        let (bq, bk, bv, bo) = (b("bq"), b("bk"), b("bv"), b("bo"));
        Self {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            gamma: params.constant(format!("{prefix}.gamma"), d, 1.0),
            beta: params.constant(format!("{prefix}.beta"), d, 0.0),
            d,
            eps,
        }
    }
}

/// `N` offset-attention blocks plus the fusion layer `(N+1)·d → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentatorParams {
    pub blocks: Vec<OaBlockParams>,
    pub fusion_w: ParamId,
    pub fusion_b: ParamId,
    pub d: usize,
}

impl AugmentatorParams {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        prefix: &str,
        d: usize,
        depth: usize,
        eps: f64,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| OaBlockParams::init(params, rng, &format!("{prefix}.oa{i}"), d, eps))
            .collect();
        let fan_in = (depth + 1) * d;
        Self {
            blocks,
            fusion_w: params.init_weight(rng, format!("{prefix}.fuse.w"), fan_in, d),
            fusion_b: params.init_bias(rng, format!("{prefix}.fuse.b"), fan_in, d),
            d,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

fn check_width(tape: &Tape, x: Var, d: usize, op: &'static str) -> Result<()> {
    let s = tape.value(x).shape();
    if s.1 != d {
        return Err(Error::Shape {
            op,
            left: s,
            right: (d, d),
        });
    }
    Ok(())
}

/// Single-head scaled dot-product self-attention. Returns the output and
/// the row-stochastic attention matrix.
pub fn self_attention_with_weights(
    tape: &mut Tape,
    params: &ParamSet,
    x: Var,
    p: &OaBlockParams,
) -> Result<(Var, Var)> {
    check_width(tape, x, p.d, "self_attention")?;
    let q = tape.linear(x, params, p.wq, p.bq)?;
    let k = tape.linear(x, params, p.wk, p.bk)?;
    let v = tape.linear(x, params, p.wv, p.bv)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (p.d as f64).sqrt());
    let attn = tape.softmax_rows(scores)?;
    let out = tape.matmul(attn, v)?;
    Ok((out, attn))
}

pub fn self_attention(tape: &mut Tape, params: &ParamSet, x: Var, p: &OaBlockParams) -> Result<Var> {
    self_attention_with_weights(tape, params, x, p).map(|(out, _)| out)
}

pub fn offset_attention(
    tape: &mut Tape,
    params: &ParamSet,
    x: Var,
    p: &OaBlockParams,
) -> Result<Var> {
    let attended = self_attention(tape, params, x, p)?;
    let offset = tape.sub(attended, x)?;
    let h = tape.linear(offset, params, p.wo, p.bo)?;
    let h = tape.feature_norm(h, params, p.gamma, p.beta, p.eps)?;
    let h = tape.relu(h);
    tape.add(h, x)
}

pub fn augmentator(
    tape: &mut Tape,
    params: &ParamSet,
    x: Var,
    p: &AugmentatorParams,
) -> Result<Var> {
    check_width(tape, x, p.d, "augmentator")?;
    let mut stages = Vec::with_capacity(p.blocks.len() + 1);
    stages.push(x);
    let mut cur = x;
    for block in &p.blocks {
        cur = offset_attention(tape, params, cur, block)?;
        stages.push(cur);
    }
    let cat = tape.concat_cols(&stages)?;
    let fused = tape.linear(cat, params, p.fusion_w, p.fusion_b)?;
    Ok(tape.relu(fused))
}

/// Independent augmentator per source, outputs concatenated along
/// channels.
pub fn sarfe_forward(
    tape: &mut Tape,
    params: &ParamSet,
    sources: &[Var],
    heads: &[AugmentatorParams],
) -> Result<Var> {
    if sources.len() != heads.len() || sources.is_empty() {
        return Err(Error::Domain(format!(
            "{} sources but {} augmentators",
            sources.len(),
            heads.len()
        )));
    }
    let rows = tape.value(sources[0]).rows();
    for &s in sources {
        if tape.value(s).rows() != rows {
            return Err(Error::Shape {
                op: "sarfe_forward",
                left: tape.value(sources[0]).shape(),
                right: tape.value(s).shape(),
            });
        }
    }
    let outs = sources
        .iter()
        .zip(heads)
        .map(|(&s, h)| augmentator(tape, params, s, h))
        .collect::<Result<Vec<_>>>()?;
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    tape.concat_cols(&outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::TokenMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> TokenMatrix {
        TokenMatrix::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let p = OaBlockParams::init(&mut ps, &mut rng, "oa", 4, 1e-5);
        let xm = random(&mut rng, 1, 4);
        let mut t = Tape::new();
        let x = t.constant(xm.clone());
        let out = self_attention(&mut t, &ps, x, &p).unwrap();
        let v = t.linear(x, &ps, p.wv, p.bv).unwrap();
        assert!(t.value(out).max_abs_diff(t.value(v)) < 1e-15);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let p = OaBlockParams::init(&mut ps, &mut rng, "oa", 8, 1e-5);
        let mut t = Tape::new();
        let x = t.constant(random(&mut rng, 27, 8));
        let (_, a) = self_attention_with_weights(&mut t, &ps, x, &p).unwrap();
        let a = t.value(a);
        for r in 0..a.rows() {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(a.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn dead_relu_branch_is_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let p = OaBlockParams::init(&mut ps, &mut rng, "oa", 4, 1e-5);
        ps.get_mut(p.gamma).values.fill(0.0);
        ps.get_mut(p.beta).values.fill(-1.0);
        let xm = random(&mut rng, 6, 4);
        let mut t = Tape::new();
        let x = t.constant(xm.clone());
        let y = offset_attention(&mut t, &ps, x, &p).unwrap();
        assert_eq!(t.value(y), &xm);
    }

    #[test]
    fn identity_block_fuses_input_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::new();
        let p = AugmentatorParams::init(&mut ps, &mut rng, "aug", 4, 1, 1e-5);
        ps.get_mut(p.blocks[0].gamma).values.fill(0.0);
        ps.get_mut(p.blocks[0].beta).values.fill(-1.0);
        let xm = random(&mut rng, 5, 4);
        let mut t = Tape::new();
        let x = t.constant(xm.clone());
        let y = augmentator(&mut t, &ps, x, &p).unwrap();

        let cat = TokenMatrix::concat_cols(&[&xm, &xm]).unwrap();
        let mut expected = cat.matmul(&ps.get(p.fusion_w).as_matrix()).unwrap();
        let bias = &ps.get(p.fusion_b).values;
        for r in 0..expected.rows() {
            for (v, b) in expected.row_mut(r).iter_mut().zip(bias) {
                *v = (*v + b).max(0.0);
            }
        }
        assert!(t.value(y).max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn shapes_preserved_and_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        for depth in 1..=3 {
            let p = AugmentatorParams::init(&mut ps, &mut rng, &format!("a{depth}"), 6, depth, 1e-5);
            let mut t = Tape::new();
            let x = t.constant(random(&mut rng, 10, 6));
            let y = augmentator(&mut t, &ps, x, &p).unwrap();
            assert_eq!(t.value(y).shape(), (10, 6));
            let bad = t.constant(random(&mut rng, 10, 5));
            assert!(matches!(augmentator(&mut t, &ps, bad, &p), Err(Error::Shape { .. })));
        }
    }

    #[test]
    fn sarfe_forward_token_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = ParamSet::new();
        let h1 = AugmentatorParams::init(&mut ps, &mut rng, "s1", 4, 1, 1e-5);
        let h2 = AugmentatorParams::init(&mut ps, &mut rng, "s2", 4, 1, 1e-5);
        let mut t = Tape::new();
        let a = t.constant(random(&mut rng, 8, 4));
        let b = t.constant(random(&mut rng, 7, 4));
        assert!(matches!(
            sarfe_forward(&mut t, &ps, &[a, b], &[h1.clone(), h2.clone()]),
            Err(Error::Shape { .. })
        ));
        let b = t.constant(random(&mut rng, 8, 4));
        let y = sarfe_forward(&mut t, &ps, &[a, b], &[h1.clone(), h2]).unwrap();
        assert_eq!(t.value(y).shape(), (8, 8));

        let single = sarfe_forward(&mut t, &ps, &[a], std::slice::from_ref(&h1)).unwrap();
        let direct = augmentator(&mut t, &ps, a, &h1).unwrap();
        assert_eq!(t.value(single), t.value(direct));
    }
}
