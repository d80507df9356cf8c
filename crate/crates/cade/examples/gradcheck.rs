//! Verify every analytic gradient against central finite differences:
//! kernel ops, the base-encoder pair loss, the multi-aggregate
//! bi-attention loss, and the stop-gradient claim.
//!
//!     cargo run --example gradcheck

use cade::verify::{run_full_gradcheck, stop_gradient_claim};

fn main() {
    let (checks, worst) = run_full_gradcheck(42);
    for c in &checks {
        println!(
            "{:<24} max rel error {:.3e}  ({} coords)",
            c.name, c.report.max_rel_error, c.report.coords_checked
        );
    }
    println!("\nworst over all checks: {worst:.3e}");

    let sg = stop_gradient_claim(42);
    println!(
        "\nstop-gradient claim: negative-term d/dA = {:e} (exact zero), \
         positive-term d/dA max = {:.3e}, full-loss finite-difference max = {:.3e}",
        sg.neg_term_attention_grad_max, sg.pos_term_attention_grad_max, sg.full_loss_fd_max
    );
}
