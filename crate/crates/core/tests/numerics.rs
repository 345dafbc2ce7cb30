use acgs::numerics::{grad_check, Tape, Tensor, Var};
use acgs::{ParamSet, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor>,
    build: Build,
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

// Values bounded away from zero so kinked ops stay differentiable at eps.
fn off_zero_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    random_tensor(rng, dims).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

const OPS: usize = 30;

fn case(op: usize, rng: &mut ChaCha8Rng) -> Case {
    let m = rng.gen_range(1..=4);
    let n = rng.gen_range(2..=4);
    let k = rng.gen_range(1..=4);
    let c = rng.gen_range(-2.0..2.0);
    let mut t = |dims: &[usize]| random_tensor(rng, dims);
    match op {
        0 => Case {
            name: "matmul",
            inputs: vec![t(&[m, k]), t(&[k, n])],
            build: Box::new(|tp, v| tp.matmul(v[0], v[1])),
        },
        1 => Case {
            name: "matmul_vector",
            inputs: vec![t(&[k]), t(&[k, n])],
            build: Box::new(|tp, v| tp.matmul(v[0], v[1])),
        },
        2 => Case {
            name: "transpose",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| tp.transpose(v[0])),
        },
        3 => Case {
            name: "add",
            inputs: vec![t(&[m, n]), t(&[m, n])],
            build: Box::new(|tp, v| tp.add(v[0], v[1])),
        },
        4 => Case {
            name: "add_row",
            inputs: vec![t(&[m, n]), t(&[n])],
            build: Box::new(|tp, v| tp.add_row(v[0], v[1])),
        },
        5 => Case {
            name: "sub",
            inputs: vec![t(&[n]), t(&[n])],
            build: Box::new(|tp, v| tp.sub(v[0], v[1])),
        },
        6 => Case {
            name: "mul",
            inputs: vec![t(&[m, n]), t(&[m, n])],
            build: Box::new(|tp, v| tp.mul(v[0], v[1])),
        },
        7 => Case {
            name: "scale",
            inputs: vec![t(&[m, n])],
            build: Box::new(move |tp, v| Ok(tp.scale(v[0], c))),
        },
        8 => Case {
            name: "add_scalar",
            inputs: vec![t(&[n])],
            build: Box::new(move |tp, v| Ok(tp.add_scalar(v[0], c))),
        },
        9 => Case {
            name: "one_minus",
            inputs: vec![t(&[n])],
            build: Box::new(|tp, v| Ok(tp.one_minus(v[0]))),
        },
        10 => Case {
            name: "sigmoid",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| Ok(tp.sigmoid(v[0]))),
        },
        11 => Case {
            name: "tanh",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| Ok(tp.tanh(v[0]))),
        },
        12 => Case {
            name: "relu",
            inputs: vec![off_zero_tensor(rng, &[m, n])],
            build: Box::new(|tp, v| Ok(tp.relu(v[0]))),
        },
        13 => Case {
            name: "gelu",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| Ok(tp.gelu(v[0]))),
        },
        14 => Case {
            name: "softmax",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| tp.softmax(v[0])),
        },
        15 => Case {
            name: "causal_softmax",
            inputs: vec![t(&[n, n])],
            build: Box::new(|tp, v| tp.causal_softmax(v[0])),
        },
        16 => Case {
            name: "log_softmax",
            inputs: vec![t(&[n])],
            build: Box::new(|tp, v| tp.log_softmax(v[0])),
        },
        17 => {
            let i = rng.gen_range(0..n);
            Case {
                name: "pick",
                inputs: vec![random_tensor(rng, &[n])],
                build: Box::new(move |tp, v| tp.pick(v[0], i)),
            }
        }
        18 => Case {
            name: "sum",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| Ok(tp.sum(v[0]))),
        },
        19 => Case {
            name: "sum_all",
            inputs: vec![t(&[n]), t(&[n]), t(&[n])],
            build: Box::new(|tp, v| tp.sum_all(v)),
        },
        20 => Case {
            name: "mean_rows",
            inputs: vec![t(&[m, n])],
            build: Box::new(|tp, v| tp.mean_rows(v[0])),
        },
        21 => Case {
            name: "concat",
            inputs: vec![t(&[n]), t(&[k])],
            build: Box::new(|tp, v| tp.concat(v)),
        },
        22 => Case {
            name: "stack_rows",
            inputs: vec![t(&[n]), t(&[n])],
            build: Box::new(|tp, v| tp.stack_rows(v)),
        },
        23 => {
            let i = rng.gen_range(0..m);
            Case {
                name: "row",
                inputs: vec![random_tensor(rng, &[m, n])],
                build: Box::new(move |tp, v| tp.row(v[0], i)),
            }
        }
        24 => {
            let start = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - start);
            Case {
                name: "slice_cols",
                inputs: vec![random_tensor(rng, &[m, n])],
                build: Box::new(move |tp, v| tp.slice_cols(v[0], start, len)),
            }
        }
        25 => Case {
            name: "concat_cols",
            inputs: vec![t(&[m, n]), t(&[m, k])],
            build: Box::new(|tp, v| tp.concat_cols(v)),
        },
        26 => {
            let ids: Vec<usize> = (0..k + 2).map(|_| rng.gen_range(0..n)).collect();
            Case {
                name: "gather",
                inputs: vec![random_tensor(rng, &[n, m])],
                build: Box::new(move |tp, v| tp.gather(v[0], &ids)),
            }
        }
        27 => Case {
            name: "reshape",
            inputs: vec![t(&[m, n])],
            build: Box::new(move |tp, v| tp.reshape(v[0], &[m * n])),
        },
        28 => Case {
            name: "layer_norm",
            inputs: vec![t(&[m, n]), t(&[n]), t(&[n])],
            build: Box::new(|tp, v| tp.layer_norm(v[0], v[1], v[2])),
        },
        29 => {
            let label = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            Case {
                name: "bce_with_logits",
                inputs: vec![Tensor::scalar(rng.gen_range(-3.0..3.0))],
                build: Box::new(move |tp, v| tp.bce_with_logits(v[0], label)),
            }
        }
        _ => unreachable!(),
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("in{i}")).collect()
}

/// `Σ w ⊙ op(inputs)` with fixed random weights, and its tape gradient.
fn weighted_loss(case: &Case, params: &ParamSet, weights: &Tensor) -> Result<(f64, ParamSet)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = names(case.inputs.len())
        .iter()
        .map(|n| tape.param(params, n))
        .collect::<Result<_>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let w = tape.leaf(weights.clone());
    let flat_out = tape.reshape(out, &[weights.len()])?;
    let prod = tape.mul(flat_out, w)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss, params)?;
    Ok((tape.value(loss).item(), grads))
}

fn output_len(case: &Case, params: &ParamSet) -> usize {
    let mut tape = Tape::new();
    let vars: Vec<Var> = names(case.inputs.len())
        .iter()
        .map(|n| tape.param(params, n).unwrap())
        .collect();
    let out = (case.build)(&mut tape, &vars).unwrap();
    tape.value(out).len()
}

#[test]
fn every_primitive_matches_finite_differences_over_100_trials() {
    let mut worst = (0.0, "");
    let mut seen = std::collections::BTreeSet::new();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let case = case(trial as usize % OPS, &mut rng);
        seen.insert(case.name);
        let params: ParamSet = names(case.inputs.len())
            .into_iter()
            .zip(case.inputs.iter().cloned())
            .collect();
        let len = output_len(&case, &params);
        let weights = random_tensor(&mut rng, &[len]);
        let (_, grads) = weighted_loss(&case, &params, &weights).unwrap();
        let err = grad_check(|p| Ok(weighted_loss(&case, p, &weights)?.0), &params, &grads, 1e-3).unwrap();
        assert!(err < 1e-4, "trial {trial} ({}): relative error {err:e}", case.name);
        if err > worst.0 {
            worst = (err, case.name);
        }
    }
    assert_eq!(seen.len(), OPS);
    eprintln!("worst primitive relative error {:e} ({})", worst.0, worst.1);
}

fn composite_loss(params: &ParamSet, alpha: f64, beta: f64) -> Result<(Var, Tape)> {
    let mut tape = Tape::new();
    let a = tape.param(params, "a")?;
    let b = tape.param(params, "b")?;
    let h = tape.matmul(a, b)?;
    let h = tape.tanh(h);
    let l1 = {
        let s = tape.log_softmax(h)?;
        let s = tape.sum(s);
        tape.scale(s, -1.0)
    };
    let l2 = {
        let g = tape.gelu(h);
        let sq = tape.mul(g, g)?;
        tape.sum(sq)
    };
    let x = tape.scale(l1, alpha);
    let y = tape.scale(l2, beta);
    let out = tape.add(x, y)?;
    Ok((out, tape))
}

fn grads_of(params: &ParamSet, alpha: f64, beta: f64) -> ParamSet {
    let (out, tape) = composite_loss(params, alpha, beta).unwrap();
    tape.backward(out, params).unwrap()
}

fn two_params(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.insert("a", random_tensor(&mut rng, &[3, 4]));
    p.insert("b", random_tensor(&mut rng, &[4, 5]));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let params = two_params(seed);
        let combined = grads_of(&params, alpha, beta);
        let mut expected = grads_of(&params, 1.0, 0.0).scaled(alpha);
        expected.add_assign(&grads_of(&params, 0.0, 1.0).scaled(beta)).unwrap();
        prop_assert!(combined.max_abs_diff(&expected) <= 1e-10);
    }

    #[test]
    fn softmax_is_positive_and_normalized(
        values in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::vector(values.clone()));
        let p = tape.softmax(v).unwrap();
        let shifted = tape.leaf(Tensor::vector(values.iter().map(|x| x + shift).collect()));
        let q = tape.softmax(shifted).unwrap();
        let p = tape.value(p).data().to_vec();
        let q = tape.value(q).data().to_vec();
        prop_assert!(p.iter().all(|&x| x > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_rows_of_matrices_are_normalized(rows in 1usize..5, cols in 1usize..6, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let v = tape.leaf(random_tensor(&mut rng, &[rows, cols]).map(|x| x * 20.0));
        let p = tape.softmax(v).unwrap();
        for r in 0..rows {
            let row = tape.value(p).row(r);
            prop_assert!(row.iter().all(|&x| x > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let params = two_params(7);
    let (o1, t1) = composite_loss(&params, 0.7, -1.3).unwrap();
    let (o2, t2) = composite_loss(&params, 0.7, -1.3).unwrap();
    assert_eq!(t1.value(o1).item().to_bits(), t2.value(o2).item().to_bits());
    let g1 = t1.backward(o1, &params).unwrap();
    let g2 = t2.backward(o2, &params).unwrap();
    for ((n1, a), (n2, b)) in g1.iter().zip(g2.iter()) {
        assert_eq!(n1, n2);
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn grad_check_reports_a_doubled_gradient() {
    let params = two_params(3);
    let grads = grads_of(&params, 1.0, 1.0);
    let loss = |p: &ParamSet| {
        let (out, tape) = composite_loss(p, 1.0, 1.0)?;
        Ok(tape.value(out).item())
    };
    assert!(grad_check(loss, &params, &grads, 1e-4).unwrap() < 1e-6);
    let err = grad_check(loss, &params, &grads.scaled(2.0), 1e-4).unwrap();
    assert!((err - 0.5).abs() < 1e-3, "{err}");
}
