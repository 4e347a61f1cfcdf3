use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat entry) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries: usize,
}

/// Compares reverse-mode gradients of `f` at `params` against central
/// differences with step `eps`.
///
/// The per-entry error is `|ga - gn| / max(1e-8, |ga| + |gn|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().expect("leaf gradient"))
        .collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for p in 0..work.len() {
        for i in 0..work[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let ga = analytic[p].data()[i];
            let err = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
            report.entries += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((p, i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let r = grad_check(
            |t, v| {
                let c = t.constant(Tensor::vector(vec![1.5, -0.5, 2.0]));
                let m = t.mul(v[0], c)?;
                Ok(t.sum(m))
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        assert_eq!(r.entries, 3);
    }

    #[test]
    fn zero_eps_rejected() {
        let w = Tensor::vector(vec![1.0]);
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[w], 0.0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
