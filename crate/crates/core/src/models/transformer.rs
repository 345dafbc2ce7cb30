//! Pre-norm transformer blocks shared by the generator and the transformer
//! discriminator.

use crate::error::Result;
use crate::numerics::{Init, ParamSet, ParamSpec, Tape, Tensor, Var};

/// Fixed sinusoidal position table `[len, width]`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for pos in 0..len {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / width as f64);
            data[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, width], data).expect("non-empty position table")
}

/// Token embeddings scaled by `sqrt(width)` plus sinusoidal positions.
pub fn embed_tokens(tape: &mut Tape, params: &ParamSet, ids: &[usize]) -> Result<Var> {
    let table = tape.param(params, "embed")?;
    let width = tape.value(table).cols();
    let rows = tape.gather(table, ids)?;
    let scaled = tape.scale(rows, (width as f64).sqrt());
    let pos = tape.leaf(sinusoidal_positions(ids.len(), width));
    tape.add(scaled, pos)
}

fn ln_specs(prefix: &str, width: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.g"), &[width], Init::Ones),
        ParamSpec::new(format!("{prefix}.b"), &[width], Init::Zeros),
    ]
}

fn attn_specs(prefix: &str, width: usize) -> Vec<ParamSpec> {
    ["wq", "wk", "wv", "wo"]
        .iter()
        .map(|w| ParamSpec::new(format!("{prefix}.{w}"), &[width, width], Init::Uniform))
        .collect()
}

fn ff_specs(prefix: &str, width: usize, ff: usize) -> [ParamSpec; 4] {
    [
        ParamSpec::new(format!("{prefix}.w1"), &[width, ff], Init::Uniform),
        ParamSpec::new(format!("{prefix}.b1"), &[ff], Init::Zeros),
        ParamSpec::new(format!("{prefix}.w2"), &[ff, width], Init::Uniform),
        ParamSpec::new(format!("{prefix}.b2"), &[width], Init::Zeros),
    ]
}

pub fn encoder_specs(prefix: &str, layers: usize, width: usize, ff: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for l in 0..layers {
        let p = format!("{prefix}.{l}");
        out.extend(attn_specs(&format!("{p}.attn"), width));
        out.extend(ln_specs(&format!("{p}.ln1"), width));
        out.extend(ln_specs(&format!("{p}.ln2"), width));
        out.extend(ff_specs(&format!("{p}.ff"), width, ff));
    }
    out.extend(ln_specs(&format!("{prefix}.ln"), width));
    out
}

pub fn decoder_specs(prefix: &str, layers: usize, width: usize, ff: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for l in 0..layers {
        let p = format!("{prefix}.{l}");
        out.extend(attn_specs(&format!("{p}.self"), width));
        out.extend(attn_specs(&format!("{p}.cross"), width));
        out.extend(ln_specs(&format!("{p}.ln1"), width));
        out.extend(ln_specs(&format!("{p}.ln2"), width));
        out.extend(ln_specs(&format!("{p}.ln3"), width));
        out.extend(ff_specs(&format!("{p}.ff"), width, ff));
    }
    out.extend(ln_specs(&format!("{prefix}.ln"), width));
    out
}

fn layer_norm(tape: &mut Tape, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let g = tape.param(params, &format!("{prefix}.g"))?;
    let b = tape.param(params, &format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b)
}

/// Multi-head scaled dot-product attention of `queries[Sq, D]` over `memory[Sk, D]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    queries: Var,
    memory: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let wq = tape.param(params, &format!("{prefix}.wq"))?;
    let wk = tape.param(params, &format!("{prefix}.wk"))?;
    let wv = tape.param(params, &format!("{prefix}.wv"))?;
    let wo = tape.param(params, &format!("{prefix}.wo"))?;
    let q = tape.matmul(queries, wq)?;
    let k = tape.matmul(memory, wk)?;
    let v = tape.matmul(memory, wv)?;
    let width = tape.value(q).cols();
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = if causal {
            tape.causal_softmax(scores)?
        } else {
            tape.softmax(scores)?
        };
        outputs.push(tape.matmul(weights, vh)?);
    }
    let joined = tape.concat_cols(&outputs)?;
    tape.matmul(joined, wo)
}

fn feed_forward(tape: &mut Tape, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w1 = tape.param(params, &format!("{prefix}.w1"))?;
    let b1 = tape.param(params, &format!("{prefix}.b1"))?;
    let w2 = tape.param(params, &format!("{prefix}.w2"))?;
    let b2 = tape.param(params, &format!("{prefix}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2)?;
    tape.add_row(o, b2)
}

/// Bidirectional encoder stack with a final layer norm.
pub fn encode(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    mut x: Var,
    layers: usize,
    heads: usize,
) -> Result<Var> {
    for l in 0..layers {
        let p = format!("{prefix}.{l}");
        let n = layer_norm(tape, params, &format!("{p}.ln1"), x)?;
        let a = multi_head_attention(tape, params, &format!("{p}.attn"), n, n, heads, false)?;
        x = tape.add(x, a)?;
        let n = layer_norm(tape, params, &format!("{p}.ln2"), x)?;
        let f = feed_forward(tape, params, &format!("{p}.ff"), n)?;
        x = tape.add(x, f)?;
    }
    layer_norm(tape, params, &format!("{prefix}.ln"), x)
}

/// Causal decoder stack attending to `memory`, with a final layer norm.
pub fn decode(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    mut x: Var,
    memory: Var,
    layers: usize,
    heads: usize,
) -> Result<Var> {
    for l in 0..layers {
        let p = format!("{prefix}.{l}");
        let n = layer_norm(tape, params, &format!("{p}.ln1"), x)?;
        let a = multi_head_attention(tape, params, &format!("{p}.self"), n, n, heads, true)?;
        x = tape.add(x, a)?;
        let n = layer_norm(tape, params, &format!("{p}.ln2"), x)?;
        let c = multi_head_attention(tape, params, &format!("{p}.cross"), n, memory, heads, false)?;
        x = tape.add(x, c)?;
        let n = layer_norm(tape, params, &format!("{p}.ln3"), x)?;
        let f = feed_forward(tape, params, &format!("{p}.ff"), n)?;
        x = tape.add(x, f)?;
    }
    layer_norm(tape, params, &format!("{prefix}.ln"), x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_table_first_rows() {
        let p = sinusoidal_positions(2, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.row(1)[0] - 1f64.sin()).abs() < 1e-15);
        assert!((p.row(1)[2] - (0.01f64).sin()).abs() < 1e-15);
    }
}
