//! Finite-difference verification of analytic gradients.
//!
//! The checker perturbs every coordinate of every parameter by ±epsilon,
//! recomputes the loss through a caller-supplied closure, and compares the
//! central difference against the analytic gradient. The closure must be
//! deterministic in the parameters (freeze trees, negatives, and any
//! stop-gradient branches before calling).

use crate::matrix::Mat;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Worst-case result of a finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and (row, col) of the worst coordinate.
    pub worst_param: String,
    pub worst_index: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        format!(
            "max rel error {:.3e} at {}[{},{}] (analytic {:.6e}, numeric {:.6e}, {} coords)",
            self.max_rel_error,
            self.worst_param,
            self.worst_index.0,
            self.worst_index.1,
            self.worst_analytic,
            self.worst_numeric,
            self.coords_checked
        )
    }
}

/// Error normalized by max(1, |analytic|, |numeric|) so near-zero gradients
/// compare on an absolute scale and large ones on a relative scale.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
}

/// Compare `analytic` gradients against central differences of `loss_fn`.
///
/// `names`, `params`, and `analytic` are parallel slices; `loss_fn` receives
/// the (possibly perturbed) parameter set and must return the scalar loss.
pub fn check_gradients<F>(
    names: &[&str],
    params: &[Mat],
    analytic: &[Mat],
    loss_fn: F,
    epsilon: f64,
) -> GradCheckReport
where
    F: Fn(&[Mat]) -> f64,
{
    assert_eq!(names.len(), params.len());
    assert_eq!(params.len(), analytic.len());
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Mat> = params.to_vec();
    for (pi, base) in params.iter().enumerate() {
        assert_eq!(
            base.shape(),
            analytic[pi].shape(),
            "gradient shape mismatch for {}",
            names[pi]
        );
        for r in 0..base.rows() {
            for c in 0..base.cols() {
                let orig = base.get(r, c);
                work[pi].set(r, c, orig + epsilon);
                let up = loss_fn(&work);
                work[pi].set(r, c, orig - epsilon);
                let down = loss_fn(&work);
                work[pi].set(r, c, orig);
                let numeric = (up - down) / (2.0 * epsilon);
                let a = analytic[pi].get(r, c);
                let err = rel_error(a, numeric);
                report.coords_checked += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_param = names[pi].to_string();
                    report.worst_index = (r, c);
                    report.worst_analytic = a;
                    report.worst_numeric = numeric;
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn tape_loss_and_grads(params: &[Mat]) -> (f64, Vec<Mat>) {
        // f(w, b) = sum(sigmoid(w . x + b)) through the tape
        let mut t = Tape::new();
        let w = t.leaf(params[0].clone());
        let b = t.leaf(params[1].clone());
        let x = t.leaf(Mat::from_rows(vec![vec![0.3, -0.7], vec![1.1, 0.4]]));
        let wx = t.matmul(w, x);
        let pre = t.add(wx, b);
        let act = t.sigmoid(pre);
        let (r, c) = t.data(act).shape();
        let ones = t.leaf(Mat::filled(r, c, 1.0));
        let loss = t.dot(act, ones);
        t.backward(loss);
        (
            t.scalar_value(loss),
            vec![t.grad(w).clone(), t.grad(b).clone()],
        )
    }

    #[test]
    fn linear_function_checks_to_near_machine_precision() {
        // f(w) = 3*w0 - 2*w1 + 0.5*w2 is linear, so central differences are exact
        let coef = [3.0, -2.0, 0.5];
        let params = vec![Mat::row_vec(vec![0.7, -1.3, 2.2])];
        let analytic = vec![Mat::row_vec(coef.to_vec())];
        let report = check_gradients(
            &["w"],
            &params,
            &analytic,
            |ps| {
                ps[0]
                    .as_slice()
                    .iter()
                    .zip(coef)
                    .map(|(&w, c)| w * c)
                    .sum()
            },
            DEFAULT_EPSILON,
        );
        assert!(
            report.max_rel_error < 1e-9,
            "linear check failed: {}",
            report.summary()
        );
    }

    #[test]
    fn sigmoid_network_gradients_match_finite_differences() {
        let params = vec![
            Mat::from_rows(vec![vec![0.4, -0.9], vec![1.2, 0.1]]),
            Mat::from_rows(vec![vec![0.05, -0.2], vec![0.3, 0.7]]),
        ];
        let (_, analytic) = tape_loss_and_grads(&params);
        let report = check_gradients(
            &["w", "b"],
            &params,
            &analytic,
            |ps| tape_loss_and_grads(ps).0,
            DEFAULT_EPSILON,
        );
        assert!(
            report.max_rel_error < 1e-8,
            "sigmoid check failed: {}",
            report.summary()
        );
    }

    #[test]
    fn random_three_layer_composition_checks_below_1e5() {
        // x -> sigmoid(x W1) -> sigmoid(. W2) -> sigmoid(. W3) -> sum
        let dims = [(3usize, 4usize), (4, 3), (3, 2)];
        let mk = |salt: usize, (r, c): (usize, usize)| {
            Mat::from_vec(
                r,
                c,
                (0..r * c)
                    .map(|i| ((i * 7 + salt * 13) % 11) as f64 / 11.0 - 0.45)
                    .collect(),
            )
        };
        let params: Vec<Mat> = dims.iter().enumerate().map(|(i, &d)| mk(i + 1, d)).collect();
        let run = |ps: &[Mat]| {
            let mut t = Tape::new();
            let mut h = t.leaf(Mat::row_vec(vec![0.8, -0.3, 1.1]));
            let mut leaves = Vec::new();
            for p in ps {
                let w = t.leaf(p.clone());
                leaves.push(w);
                let lin = t.matmul(h, w);
                h = t.sigmoid(lin);
            }
            let (r, c) = t.data(h).shape();
            let ones = t.leaf(Mat::filled(r, c, 1.0));
            let loss = t.dot(h, ones);
            (t, leaves, loss)
        };
        let (mut tape, leaves, loss) = run(&params);
        tape.backward(loss);
        let analytic: Vec<Mat> = leaves.iter().map(|&l| tape.grad(l).clone()).collect();
        let report = check_gradients(
            &["w1", "w2", "w3"],
            &params,
            &analytic,
            |ps| {
                let (t, _, l) = run(ps);
                t.scalar_value(l)
            },
            DEFAULT_EPSILON,
        );
        assert!(report.max_rel_error < 1e-5, "{}", report.summary());
    }

    #[test]
    fn report_locates_a_wrong_coordinate() {
        let params = vec![Mat::row_vec(vec![1.0, 2.0])];
        let mut analytic = vec![Mat::row_vec(vec![2.0, 4.0])];
        analytic[0].set(0, 1, 3.5); // corrupt d/dw1 of sum(w^2)
        let report = check_gradients(
            &["w"],
            &params,
            &analytic,
            |ps| ps[0].as_slice().iter().map(|w| w * w).sum(),
            DEFAULT_EPSILON,
        );
        assert_eq!(report.worst_param, "w");
        assert_eq!(report.worst_index, (0, 1));
        assert!(report.max_rel_error > 0.1);
    }
}
