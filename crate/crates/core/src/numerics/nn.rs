//! Composite layers built from tape primitives.

use super::{Init, ParamSet, ParamSpec, Tape, Var};
use crate::error::{Error, Result};

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: usize) -> Result<Var> {
    let n = tape.value(logits).len();
    if target >= n {
        return Err(Error::Index { index: target, len: n });
    }
    let log_probs = tape.log_softmax(logits)?;
    let picked = tape.pick(log_probs, target)?;
    Ok(tape.scale(picked, -1.0))
}

/// Parameter nodes of one gated recurrent unit, registered on a tape.
///
/// Naming under `prefix`: `w_*` input weights `[d_in, d_h]`, `u_*` recurrent
/// weights `[d_h, d_h]`, `b_*` biases `[d_h]` for the update (`z`), reset
/// (`r`) and candidate (`c`) paths.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w_z: Var,
    u_z: Var,
    b_z: Var,
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_c: Var,
    u_c: Var,
    b_c: Var,
}

impl GruVars {
    pub fn specs(prefix: &str, d_in: usize, d_h: usize) -> Vec<ParamSpec> {
        let mut out = Vec::with_capacity(9);
        for gate in ["z", "r", "c"] {
            out.push(ParamSpec::new(format!("{prefix}.w_{gate}"), &[d_in, d_h], Init::Uniform));
            out.push(ParamSpec::new(format!("{prefix}.u_{gate}"), &[d_h, d_h], Init::Uniform));
            out.push(ParamSpec::new(format!("{prefix}.b_{gate}"), &[d_h], Init::Zeros));
        }
        out
    }

    pub fn register(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<Self> {
        let mut get = |name: &str| tape.param(params, &format!("{prefix}.{name}"));
        Ok(GruVars {
            w_z: get("w_z")?,
            u_z: get("u_z")?,
            b_z: get("b_z")?,
            w_r: get("w_r")?,
            u_r: get("u_r")?,
            b_r: get("b_r")?,
            w_c: get("w_c")?,
            u_c: get("u_c")?,
            b_c: get("b_c")?,
        })
    }

    pub fn hidden_size(&self, tape: &Tape) -> usize {
        tape.value(self.b_z).len()
    }
}

fn gate(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add(s, b)
}

/// One GRU step:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `c = tanh(x W_c + (r ⊙ h) U_c + b_c)`, `h' = (1 - z) ⊙ h + z ⊙ c`.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, w: &GruVars) -> Result<Var> {
    let z_pre = gate(tape, x, h, w.w_z, w.u_z, w.b_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, x, h, w.w_r, w.u_r, w.b_r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let c_pre = gate(tape, x, rh, w.w_c, w.u_c, w.b_c)?;
    let c = tape.tanh(c_pre);
    // h + z ⊙ (c - h)
    let diff = tape.sub(c, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

/// Parameters of additive attention:
/// `score_t = v · tanh(W_q q + W_k k_t)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    w_query: Var,
    w_key: Var,
    v: Var,
}

impl AttentionVars {
    pub fn specs(prefix: &str, d_query: usize, d_key: usize, d_attn: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{prefix}.w_query"), &[d_query, d_attn], Init::Uniform),
            ParamSpec::new(format!("{prefix}.w_key"), &[d_key, d_attn], Init::Uniform),
            ParamSpec::new(format!("{prefix}.v"), &[d_attn, 1], Init::Uniform),
        ]
    }

    pub fn register(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(AttentionVars {
            w_query: tape.param(params, &format!("{prefix}.w_query"))?,
            w_key: tape.param(params, &format!("{prefix}.w_key"))?,
            v: tape.param(params, &format!("{prefix}.v"))?,
        })
    }

    /// `keys @ W_k`, reusable across decoding steps.
    pub fn project_keys(&self, tape: &mut Tape, keys: Var) -> Result<Var> {
        tape.matmul(keys, self.w_key)
    }

    /// Attention with pre-projected keys; returns `(context, weights)`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        query: Var,
        projected_keys: Var,
        values: Var,
    ) -> Result<(Var, Var)> {
        let steps = tape.value(projected_keys).rows();
        if tape.value(values).rank() != 2 || tape.value(values).rows() != steps {
            return Err(Error::Shape {
                op: "attention",
                lhs: tape.value(projected_keys).dims().to_vec(),
                rhs: tape.value(values).dims().to_vec(),
            });
        }
        let q = tape.matmul(query, self.w_query)?;
        let pre = tape.add_row(projected_keys, q)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, self.v)?;
        let scores = tape.reshape(scores, &[steps])?;
        let weights = tape.softmax(scores)?;
        let context = tape.matmul(weights, values)?;
        Ok((context, weights))
    }
}

/// Additive attention of `query[d]` over `keys[T, d]` / `values[T, d_v]`.
/// Returns the context vector and the attention weights.
pub fn attention(
    tape: &mut Tape,
    query: Var,
    keys: Var,
    values: Var,
    w: &AttentionVars,
) -> Result<(Var, Var)> {
    let kv = tape.value(keys);
    if kv.rank() != 2 {
        return Err(Error::invalid("attention needs at least one key"));
    }
    let projected = w.project_keys(tape, keys)?;
    w.attend(tape, query, projected, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::sigmoid;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(specs: &[ParamSpec], seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        specs
            .iter()
            .map(|s| {
                let n: usize = s.dims.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-0.7..0.7)).collect();
                (s.name.clone(), Tensor::new(s.dims.clone(), data).unwrap())
            })
            .collect()
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let mut logits = vec![0.0; 5];
        logits[2] = 1e6;
        let l = t.leaf(Tensor::vector(logits));
        let ce = cross_entropy(&mut t, l, 2).unwrap();
        assert!(t.value(ce).item().abs() < 1e-12);

        let u = t.leaf(Tensor::vector(vec![0.3; 4]));
        let ce = cross_entropy(&mut t, u, 1).unwrap();
        assert!((t.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&mut t, u, 4).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let raw = vec![0.2, -1.0, 0.7, 1.5];
        let mut t = Tape::new();
        let l = t.leaf(Tensor::vector(raw.clone()));
        let ce = cross_entropy(&mut t, l, 2).unwrap();
        let g = t.backward_all(ce).unwrap();
        let g = g.get(l).unwrap();
        let z: f64 = raw.iter().map(|x| x.exp()).sum();
        for (i, &x) in raw.iter().enumerate() {
            let expected = x.exp() / z - if i == 2 { 1.0 } else { 0.0 };
            assert!((g.data()[i] - expected).abs() < 1e-14);
        }
    }

    fn gru_zero_params(d_in: usize, d_h: usize) -> ParamSet {
        GruVars::specs("g", d_in, d_h)
            .iter()
            .map(|s| (s.name.clone(), Tensor::zeros(&s.dims)))
            .collect()
    }

    #[test]
    fn gru_with_zero_weights_halves_state() {
        let p = gru_zero_params(3, 4);
        let mut t = Tape::new();
        let w = GruVars::register(&mut t, &p, "g").unwrap();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let h = t.leaf(Tensor::vector(vec![0.4, -0.8, 2.0, 1.0]));
        let out = gru_cell(&mut t, x, h, &w).unwrap();
        assert_eq!(t.value(out).data(), &[0.2, -0.4, 1.0, 0.5]);

        let h0 = t.leaf(Tensor::zeros(&[4]));
        let out = gru_cell(&mut t, x, h0, &w).unwrap();
        assert!(t.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_matches_scalar_recomputation() {
        let (d_in, d_h) = (3, 4);
        let p = random_params(&GruVars::specs("g", d_in, d_h), 11);
        let x = [0.3, -0.1, 0.8];
        let h = [0.5, -0.2, 0.1, 0.9];
        let mut t = Tape::new();
        let w = GruVars::register(&mut t, &p, "g").unwrap();
        let xv = t.leaf(Tensor::vector(x.to_vec()));
        let hv = t.leaf(Tensor::vector(h.to_vec()));
        let out = gru_cell(&mut t, xv, hv, &w).unwrap();

        let at = |name: &str, i: usize, j: usize| {
            let m = p.get(&format!("g.{name}")).unwrap();
            m.data()[i * m.cols() + j]
        };
        let bias = |name: &str, j: usize| p.get(&format!("g.{name}")).unwrap().data()[j];
        let lin = |w: &str, u: &str, b: &str, hh: &[f64], j: usize| {
            let mut s = bias(b, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * at(w, i, j);
            }
            for (i, hi) in hh.iter().enumerate() {
                s += hi * at(u, i, j);
            }
            s
        };
        let r: Vec<f64> = (0..d_h).map(|j| sigmoid(lin("w_r", "u_r", "b_r", &h, j))).collect();
        let rh: Vec<f64> = (0..d_h).map(|j| r[j] * h[j]).collect();
        for j in 0..d_h {
            let z = sigmoid(lin("w_z", "u_z", "b_z", &h, j));
            let c = lin("w_c", "u_c", "b_c", &rh, j).tanh();
            let expected = (1.0 - z) * h[j] + z * c;
            assert!((t.value(out).data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_examples() {
        let specs = AttentionVars::specs("a", 3, 3, 5);
        let p = random_params(&specs, 3);
        let mut t = Tape::new();
        let w = AttentionVars::register(&mut t, &p, "a").unwrap();
        let q = t.leaf(Tensor::vector(vec![0.1, 0.2, -0.3]));

        let keys = t.leaf(Tensor::matrix(4, 3, [0.5, -0.5, 1.0].repeat(4)).unwrap());
        let values = t.leaf(
            Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap(),
        );
        let (_, weights) = attention(&mut t, q, keys, values, &w).unwrap();
        assert!(t.value(weights).data().iter().all(|&x| x == 0.25));

        let one_key = t.leaf(Tensor::matrix(1, 3, vec![0.3, 0.2, 0.1]).unwrap());
        let one_val = t.leaf(Tensor::matrix(1, 3, vec![7.0, 8.0, 9.0]).unwrap());
        let (ctx, weights) = attention(&mut t, q, one_key, one_val, &w).unwrap();
        assert_eq!(t.value(weights).data(), &[1.0]);
        assert_eq!(t.value(ctx).data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn attention_matches_brute_force() {
        let (d, a, steps) = (3, 4, 5);
        let p = random_params(&AttentionVars::specs("a", d, d, a), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..steps * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..steps * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut t = Tape::new();
        let w = AttentionVars::register(&mut t, &p, "a").unwrap();
        let qv = t.leaf(Tensor::vector(q.clone()));
        let kv = t.leaf(Tensor::matrix(steps, d, k.clone()).unwrap());
        let vv = t.leaf(Tensor::matrix(steps, d, v.clone()).unwrap());
        let (ctx, _) = attention(&mut t, qv, kv, vv, &w).unwrap();

        let wq = p.get("a.w_query").unwrap().data();
        let wk = p.get("a.w_key").unwrap().data();
        let vw = p.get("a.v").unwrap().data();
        let scores: Vec<f64> = (0..steps)
            .map(|s| {
                (0..a)
                    .map(|j| {
                        let mut pre = 0.0;
                        for i in 0..d {
                            pre += q[i] * wq[i * a + j] + k[s * d + i] * wk[i * a + j];
                        }
                        vw[j] * pre.tanh()
                    })
                    .sum()
            })
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for i in 0..d {
            let expected: f64 = (0..steps).map(|s| scores[s].exp() / z * v[s * d + i]).sum();
            assert!((t.value(ctx).data()[i] - expected).abs() < 1e-12);
        }
    }
}
