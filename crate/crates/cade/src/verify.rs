//! The built-in verification suite behind the `gradcheck` command.
//!
//! Three layers: every kernel op against central finite differences on
//! random small shapes, the full base-encoder forward plus pair loss on a
//! frozen six-node instance, and the full multi-aggregate loss with
//! bi-attention. The stop-gradient claim is checked separately: the
//! negative term's analytic gradient w.r.t. the attention vector is
//! exactly zero while the full loss still moves with it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dual::{dual_encode_with_trees, sample_candidate_trees, Similarity};
use crate::encoder::{lease_model, sagb_forward};
use crate::gradcheck::{check_gradients, GradCheckReport, DEFAULT_EPSILON};
use crate::graph::Graph;
use crate::matrix::Mat;
use crate::model::{Activation, AggregatorKind, DualMode, Model, ModelConfig};
use crate::rng::substream;
use crate::sampling::{sample_tree, NeighborhoodTree};
use crate::synth;
use crate::tape::{Tape, Value};
use crate::train::{loss_ms, ma_loss_terms, NegAttention};

/// One named check's worst finite-difference error.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rng.gen_range(lo..hi));
        }
    }
    m
}

/// Values bounded away from zero so kinked ops (relu, max) see no
/// crossing within the finite-difference epsilon.
fn rand_mat_offzero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mag = rng.gen_range(0.1..2.0);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            m.set(r, c, sign * mag);
        }
    }
    m
}

fn scalarize(tape: &mut Tape, v: Value) -> Value {
    let (r, c) = tape.data(v).shape();
    let probe = tape.leaf(Mat::from_vec(
        r,
        c,
        (0..r * c).map(|i| 0.3 + 0.1 * i as f64).collect(),
    ));
    let prod = tape.elementwise_mul(v, probe);
    let sig = tape.sigmoid(prod);
    let ones = tape.leaf(Mat::filled(r, c, 1.0));
    tape.dot(sig, ones)
}

fn check_unary(
    name: &str,
    input: Mat,
    build: impl Fn(&mut Tape, Value) -> Value,
) -> CheckOutcome {
    let run = |m: &Mat| {
        let mut tape = Tape::new();
        let x = tape.leaf(m.clone());
        let y = build(&mut tape, x);
        let loss = scalarize(&mut tape, y);
        (tape, x, loss)
    };
    let (mut tape, x, loss) = run(&input);
    tape.backward(loss);
    let analytic = vec![tape.grad(x).clone()];
    let report = check_gradients(
        &[name],
        std::slice::from_ref(&input),
        &analytic,
        |ps| {
            let (t, _, l) = run(&ps[0]);
            t.scalar_value(l)
        },
        DEFAULT_EPSILON,
    );
    CheckOutcome {
        name: name.to_string(),
        report,
    }
}

fn check_binary(
    name: &str,
    a: Mat,
    b: Mat,
    build: impl Fn(&mut Tape, Value, Value) -> Value,
) -> CheckOutcome {
    let run = |ps: &[Mat]| {
        let mut tape = Tape::new();
        let x = tape.leaf(ps[0].clone());
        let y = tape.leaf(ps[1].clone());
        let out = build(&mut tape, x, y);
        let loss = scalarize(&mut tape, out);
        (tape, [x, y], loss)
    };
    let params = vec![a, b];
    let (mut tape, leaves, loss) = run(&params);
    tape.backward(loss);
    let analytic: Vec<Mat> = leaves.iter().map(|&l| tape.grad(l).clone()).collect();
    let report = check_gradients(
        &[&format!("{name}.lhs"), &format!("{name}.rhs")],
        &params,
        &analytic,
        |ps| {
            let (t, _, l) = run(ps);
            t.scalar_value(l)
        },
        DEFAULT_EPSILON,
    );
    CheckOutcome {
        name: name.to_string(),
        report,
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=8), rng.gen_range(1..=8))
}

/// Finite-difference check of every kernel op on random shapes up to 8x8.
pub fn kernel_op_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = substream(seed, "gradcheck-kernel");
    let mut out = Vec::new();

    let (m, k) = dims(&mut rng);
    let (_, n) = dims(&mut rng);
    out.push(check_binary(
        "matmul",
        rand_mat(&mut rng, m, k, -1.5, 1.5),
        rand_mat(&mut rng, k, n, -1.5, 1.5),
        |t, a, b| t.matmul(a, b),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_binary(
        "add",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        |t, a, b| t.add(a, b),
    ));
    out.push(check_binary(
        "add_row_broadcast",
        rand_mat(&mut rng, r.max(2), c, -1.5, 1.5),
        rand_mat(&mut rng, 1, c, -1.5, 1.5),
        |t, a, b| t.add(a, b),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_binary(
        "concat_cols",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        rand_mat(&mut rng, r, 1 + c / 2, -1.5, 1.5),
        |t, a, b| t.concat_cols(a, b),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_binary(
        "stack_rows",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        rand_mat(&mut rng, 1 + r / 2, c, -1.5, 1.5),
        |t, a, b| t.stack_rows(&[a, b]),
    ));
    let rows = rng.gen_range(2..8);
    let (_, c) = dims(&mut rng);
    out.push(check_unary(
        "row_slice",
        rand_mat(&mut rng, rows, c, -1.5, 1.5),
        move |t, x| t.row_slice(x, 1, rows - 1),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_unary(
        "transpose",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        |t, x| t.transpose(x),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_unary(
        "sigmoid",
        rand_mat(&mut rng, r, c, -3.0, 3.0),
        |t, x| t.sigmoid(x),
    ));
    out.push(check_unary(
        "relu",
        rand_mat_offzero(&mut rng, r, c),
        |t, x| t.relu(x),
    ));
    out.push(check_unary(
        "log_sigmoid",
        rand_mat(&mut rng, r, c, -3.0, 3.0),
        |t, x| t.log_sigmoid(x),
    ));
    out.push(check_unary("ln", rand_mat(&mut rng, r, c, 0.2, 3.0), |t, x| {
        t.ln(x)
    }));
    let (r, c) = dims(&mut rng);
    out.push(check_binary(
        "elementwise_mul",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        |t, a, b| t.elementwise_mul(a, b),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_unary(
        "reduce_mean_rows",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        |t, x| t.reduce_mean_rows(x),
    ));
    out.push(check_unary(
        "reduce_max_rows",
        rand_mat(&mut rng, r.max(2), c, -1.5, 1.5),
        |t, x| t.reduce_max_rows(x),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_unary(
        "softmax_flat",
        rand_mat(&mut rng, r, c, -2.0, 2.0),
        |t, x| t.softmax_flat(x),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_binary(
        "dot",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        |t, a, b| t.dot(a, b),
    ));
    let (r, c) = dims(&mut rng);
    out.push(check_unary(
        "scale",
        rand_mat(&mut rng, r, c, -1.5, 1.5),
        |t, x| t.scale(x, -1.7),
    ));
    out.push(check_unary(
        "l2_normalize_rows",
        rand_mat_offzero(&mut rng, r, c),
        |t, x| t.l2_normalize_rows(x),
    ));

    // stop_gradient: the stopped branch is held at its base value inside
    // the closure, so finite differences agree with the exact-zero analytic
    // gradient through that branch
    let (r, c) = dims(&mut rng);
    let base = rand_mat(&mut rng, r, c, -1.5, 1.5);
    let probe = rand_mat(&mut rng, r, c, -1.5, 1.5);
    let pinned = base.clone();
    let run = |m: &Mat, pin: &Mat| {
        let mut tape = Tape::new();
        let x = tape.leaf(m.clone());
        let stopped = tape.leaf(pin.clone()); // stands in for stop_gradient(x)
        let pr = tape.leaf(probe.clone());
        let live = tape.elementwise_mul(x, pr);
        let both = tape.add(live, stopped);
        let loss = scalarize(&mut tape, both);
        (tape, x, loss)
    };
    let direct = {
        // analytic route with the real op
        let mut tape = Tape::new();
        let x = tape.leaf(base.clone());
        let stopped = tape.stop_gradient(x);
        let pr = tape.leaf(probe.clone());
        let live = tape.elementwise_mul(x, pr);
        let both = tape.add(live, stopped);
        let loss = scalarize(&mut tape, both);
        tape.backward(loss);
        tape.grad(x).clone()
    };
    let report = check_gradients(
        &["stop_gradient"],
        std::slice::from_ref(&base),
        std::slice::from_ref(&direct),
        |ps| {
            let (t, _, l) = run(&ps[0], &pinned);
            t.scalar_value(l)
        },
        DEFAULT_EPSILON,
    );
    out.push(CheckOutcome {
        name: "stop_gradient".to_string(),
        report,
    });
    out
}

fn micro_model(mode: DualMode, seed: u64) -> (Graph, Model) {
    let g = synth::two_cliques(3, seed); // 6 nodes
    let cfg = ModelConfig {
        mode,
        candidates: 2,
        depth: 2,
        feat_dim: g.feature_dim(),
        dim: 3,
        layer_sizes: vec![2, 2],
        aggregator: AggregatorKind::Mean,
        activation: Activation::Sigmoid,
        normalize_output: false,
        seed,
    };
    let train: Vec<usize> = (0..g.num_nodes()).collect();
    let model = Model::init(cfg, g.num_nodes(), &train);
    (g, model)
}

fn with_params(model: &Model, params: &[Mat]) -> Model {
    let mut m = model.clone();
    for ((_, slot), val) in m.params_mut().into_iter().zip(params) {
        *slot = val.clone();
    }
    m
}

type FrozenTrees = (Vec<NeighborhoodTree>, Vec<NeighborhoodTree>, Vec<NeighborhoodTree>);

fn frozen_trees(g: &Graph, model: &Model, seed: u64) -> FrozenTrees {
    let mut rng = substream(seed, "gradcheck-trees");
    let trees_v = sample_candidate_trees(g, 0, &model.cfg, &mut rng).unwrap();
    let trees_p = sample_candidate_trees(g, 1, &model.cfg, &mut rng).unwrap();
    let neg_trees: Vec<NeighborhoodTree> = [4usize, 5]
        .iter()
        .map(|&n| sample_tree(g, n, &model.cfg.layer_sizes, &mut rng).unwrap())
        .collect();
    (trees_v, trees_p, neg_trees)
}

/// Full base-encoder forward plus the negative-sampling pair loss on a
/// frozen six-node micro-instance, checked parameter by parameter.
pub fn sagb_loss_check(seed: u64) -> CheckOutcome {
    let (g, model) = micro_model(DualMode::MultiSample, seed);
    let (trees_v, trees_p, neg_trees) = frozen_trees(&g, &model, seed);

    let run = |m: &Model| {
        let mut tape = Tape::new();
        let lease = lease_model(&mut tape, m);
        let bias = lease.bias.as_ref().map(|b| (b, &m.bias));
        let out = dual_encode_with_trees(
            &mut tape,
            &m.cfg,
            &lease,
            bias,
            &trees_v,
            &trees_p,
            g.features(),
            Similarity::Dot,
        );
        let z_negs: Vec<Value> = neg_trees
            .iter()
            .map(|t| {
                sagb_forward(&mut tape, &m.cfg, &lease.encoders[0], bias, t, g.features())
            })
            .collect();
        let loss = loss_ms(&mut tape, out.z_anchor, out.z_partner, &z_negs);
        (tape, lease, loss)
    };

    let (mut tape, lease, loss) = run(&model);
    tape.backward(loss);
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let bases: Vec<Mat> = model.params().iter().map(|(_, m)| (*m).clone()).collect();
    let analytic = lease.grads(&tape, &model);
    let report = check_gradients(
        &name_refs,
        &bases,
        &analytic,
        |ps| {
            let (t, _, l) = run(&with_params(&model, ps));
            t.scalar_value(l)
        },
        DEFAULT_EPSILON,
    );
    CheckOutcome {
        name: "sagb_pair_loss".to_string(),
        report,
    }
}

/// Full multi-aggregate loss (bi-attention, weight-vector similarity,
/// stop-gradient negatives) on a frozen micro-instance. The negative
/// branch's attention is pinned at its base value inside the closure so
/// finite differences match the stop-gradient semantics.
pub fn ma_loss_check(seed: u64) -> CheckOutcome {
    let (g, model) = micro_model(DualMode::MultiAggregate, seed);
    let (trees_v, trees_p, neg_trees) = frozen_trees(&g, &model, seed);
    let pinned_attention = model.attention.clone().unwrap();

    let run = |m: &Model, neg_attention: NegAttention| {
        let mut tape = Tape::new();
        let lease = lease_model(&mut tape, m);
        let bias = lease.bias.as_ref().map(|b| (b, &m.bias));
        let (pos, neg, _) = ma_loss_terms(
            &mut tape,
            &m.cfg,
            &lease,
            bias,
            &trees_v[0],
            &trees_p[0],
            &neg_trees,
            g.features(),
            neg_attention,
        );
        let loss = tape.add(pos, neg);
        (tape, lease, loss)
    };

    let (mut tape, lease, loss) = run(&model, NegAttention::Stopped);
    tape.backward(loss);
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let bases: Vec<Mat> = model.params().iter().map(|(_, m)| (*m).clone()).collect();
    let analytic = lease.grads(&tape, &model);
    let report = check_gradients(
        &name_refs,
        &bases,
        &analytic,
        |ps| {
            let (t, _, l) = run(
                &with_params(&model, ps),
                NegAttention::Pinned(pinned_attention.clone()),
            );
            t.scalar_value(l)
        },
        DEFAULT_EPSILON,
    );
    CheckOutcome {
        name: "ma_biattention_loss".to_string(),
        report,
    }
}

/// Outcome of the stop-gradient verification.
#[derive(Clone, Debug)]
pub struct StopGradientOutcome {
    /// max |d(negative term)/d(attention)| from the tape; must be 0.0.
    pub neg_term_attention_grad_max: f64,
    /// max |d(positive term)/d(attention)|; nonzero for generic inputs.
    pub pos_term_attention_grad_max: f64,
    /// max |central difference of the full loss w.r.t. attention|.
    pub full_loss_fd_max: f64,
}

/// The central training trick: negatives must not train the attention
/// vector, yet the full loss still depends on it.
pub fn stop_gradient_claim(seed: u64) -> StopGradientOutcome {
    let (g, model) = micro_model(DualMode::MultiAggregate, seed);
    let (trees_v, trees_p, neg_trees) = frozen_trees(&g, &model, seed);

    let build = |m: &Model| {
        let mut tape = Tape::new();
        let lease = lease_model(&mut tape, m);
        let bias = lease.bias.as_ref().map(|b| (b, &m.bias));
        let (pos, neg, _) = ma_loss_terms(
            &mut tape,
            &m.cfg,
            &lease,
            bias,
            &trees_v[0],
            &trees_p[0],
            &neg_trees,
            g.features(),
            NegAttention::Stopped,
        );
        (tape, lease, pos, neg)
    };

    let (mut tape, lease, _pos, neg) = build(&model);
    tape.backward(neg);
    let attn = lease.attention.unwrap();
    let neg_grad_max = tape.grad(attn).max_abs();

    let (mut tape, lease, pos, _neg) = build(&model);
    tape.backward(pos);
    let attn = lease.attention.unwrap();
    let pos_grad_max = tape.grad(attn).max_abs();

    // true finite differences of the full loss: perturbing the attention
    // vector changes both terms (stop-gradient only blocks the backward
    // path, not the value)
    let full_loss = |m: &Model| {
        let (t, _, pos, neg) = build(m);
        t.data(pos).get(0, 0) + t.data(neg).get(0, 0)
    };
    let eps = DEFAULT_EPSILON;
    let mut fd_max = 0.0_f64;
    let base = model.attention.clone().unwrap();
    for r in 0..base.rows() {
        let mut up = model.clone();
        up.attention.as_mut().unwrap().set(r, 0, base.get(r, 0) + eps);
        let mut down = model.clone();
        down.attention.as_mut().unwrap().set(r, 0, base.get(r, 0) - eps);
        let fd = (full_loss(&up) - full_loss(&down)) / (2.0 * eps);
        fd_max = fd_max.max(fd.abs());
    }
    StopGradientOutcome {
        neg_term_attention_grad_max: neg_grad_max,
        pos_term_attention_grad_max: pos_grad_max,
        full_loss_fd_max: fd_max,
    }
}

/// Everything the `gradcheck` command runs, with the overall worst error.
pub fn run_full_gradcheck(seed: u64) -> (Vec<CheckOutcome>, f64) {
    let mut checks = kernel_op_checks(seed);
    checks.push(sagb_loss_check(seed));
    checks.push(ma_loss_check(seed));
    let worst = checks
        .iter()
        .map(|c| c.report.max_rel_error)
        .fold(0.0, f64::max);
    (checks, worst)
}
