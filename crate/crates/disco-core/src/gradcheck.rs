//! Central finite-difference gradient checking.
//!
//! The checker is deliberately independent of the reverse sweep: it only
//! ever runs the forward builder at perturbed inputs, so it can vouch for
//! the analytic gradients rather than restate them.

use crate::error::Result;
use crate::graph::{Graph, NodeId};

/// Forward builder: binds the given input buffers as leaves and returns a
/// scalar loss node.
pub type LossBuilder = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>;

pub struct GradCheck {
    pub h: f64,
    pub rel_tol: f64,
    /// Differences below this magnitude on both sides count as agreeing.
    pub abs_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

pub struct GradMismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl GradCheck {
    /// Compares analytic gradients of `build`'s loss against central
    /// differences for every element of every input. Returns the worst
    /// relative error, or the first mismatch beyond tolerance.
    pub fn run(
        &self,
        inputs: &[(Vec<usize>, Vec<f64>)],
        build: &LossBuilder,
    ) -> std::result::Result<f64, Box<GradMismatch>> {
        let eval = |bufs: &[(Vec<usize>, Vec<f64>)]| -> f64 {
            let mut g = Graph::<f64>::new();
            let ids: Vec<NodeId> = bufs
                .iter()
                .map(|(shape, data)| g.leaf_from(shape.clone(), data.clone(), false))
                .collect();
            let loss = build(&mut g, &ids).expect("forward must build at perturbed points");
            g.data(loss)[0]
        };

        // Analytic pass.
        let mut g = Graph::<f64>::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .map(|(shape, data)| g.leaf_from(shape.clone(), data.clone(), true))
            .collect();
        let loss = build(&mut g, &ids).expect("forward must build");
        g.backward(loss).expect("backward must run");
        let analytic: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| {
                g.grad(id)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; g.data(id).len()])
            })
            .collect();

        let mut worst = 0.0f64;
        let mut perturbed = inputs.to_vec();
        for (ti, (_, data)) in inputs.iter().enumerate() {
            for ei in 0..data.len() {
                let orig = data[ei];
                perturbed[ti].1[ei] = orig + self.h;
                let up = eval(&perturbed);
                perturbed[ti].1[ei] = orig - self.h;
                let down = eval(&perturbed);
                perturbed[ti].1[ei] = orig;
                let numeric = (up - down) / (2.0 * self.h);
                let a = analytic[ti][ei];
                if a.abs() < self.abs_floor && numeric.abs() < self.abs_floor {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                worst = worst.max(rel);
                if rel > self.rel_tol {
                    return Err(Box::new(GradMismatch {
                        input: ti,
                        element: ei,
                        analytic: a,
                        numeric,
                        rel_err: rel,
                    }));
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_correct_gradient() {
        let check = GradCheck::default();
        let worst = check
            .run(&[(vec![3], vec![0.3, -0.7, 1.2])], &|g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                g.sum(sq)
            })
            .unwrap_or_else(|m| panic!("mismatch: {} vs {}", m.analytic, m.numeric));
        assert!(worst < 1e-6);
    }
}
