use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Outcome of a finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`
    pub max_rel_error: f64,
    pub worst_leaf: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

fn eval<T, F>(f: &F, leaves: &[(&str, Tensor<T>)]) -> Result<(Tape<T>, NodeId)>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids = leaves
        .iter()
        .map(|(name, v)| tape.leaf(name, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &ids)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::invalid("grad_check", "closure must return a scalar loss"));
    }
    Ok((tape, loss))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences over every coordinate of every leaf.
///
/// `f` receives the leaf nodes in the order given and must be deterministic.
pub fn grad_check<T, F>(f: F, leaves: &[(&str, Tensor<T>)], epsilon: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid("grad_check", "epsilon must be positive"));
    }
    let (tape, loss) = eval(&f, leaves)?;
    let grads = tape.backward(loss)?;
    let eps = T::lit(epsilon);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_leaf: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    let mut work: Vec<(&str, Tensor<T>)> = leaves.to_vec();
    for li in 0..leaves.len() {
        let analytic = grads.get(leaves[li].0).expect("leaf gradient").clone();
        for ci in 0..leaves[li].1.len() {
            let orig = leaves[li].1.data()[ci];
            work[li].1.data_mut()[ci] = orig + eps;
            let (t, l) = eval(&f, &work)?;
            let plus = t.value(l).data()[0];
            work[li].1.data_mut()[ci] = orig - eps;
            let (t, l) = eval(&f, &work)?;
            let minus = t.value(l).data()[0];
            work[li].1.data_mut()[ci] = orig;

            let numeric = (plus - minus).to_f64().unwrap() / (2.0 * epsilon);
            let a = analytic.data()[ci].to_f64().unwrap();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_leaf = leaves[li].0.to_string();
                report.worst_index = ci;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FlowField;
    use crate::testutil::random_tensor;

    #[test]
    fn linear_function_is_exact() {
        let x = random_tensor(&[2, 3, 3], 1).cast::<f64>();
        let r = grad_check(
            |t, l| {
                let s = t.scale(l[0], 3.0)?;
                t.sum(s)
            },
            &[("x", x)],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.coordinates, 18);
    }

    #[test]
    fn softmax_then_sum_of_squares() {
        let x = random_tensor(&[5, 3, 3], 2).cast::<f64>();
        let r = grad_check(
            |t, l| {
                let s = t.softmax(l[0], 0)?;
                let sq = t.mul(s, s)?;
                t.sum(sq)
            },
            &[("x", x)],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn warp_with_constant_flow() {
        let x = random_tensor(&[2, 5, 6], 3).cast::<f64>();
        let flow = FlowField::new(random_tensor(&[2, 5, 6], 4).scale(1.7)).unwrap();
        let probe = random_tensor(&[2, 5, 6], 5).cast::<f64>();
        let r = grad_check(
            |t, l| {
                let w = t.warp(l[0], &flow)?;
                let p = t.constant(probe.clone());
                let m = t.mul(w, p)?;
                let sq = t.mul(m, m)?;
                t.sum(sq)
            },
            &[("x", x)],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn rejects_non_scalar_and_reports_non_finite_op() {
        let x = random_tensor(&[3], 1).cast::<f64>();
        assert!(grad_check(|_, l| Ok(l[0]), &[("x", x.clone())], 1e-6).is_err());
        let huge = Tensor::full([2], 1e300f64);
        let e = grad_check(
            |t, l| {
                let m = t.mul(l[0], l[0])?;
                t.sum(m)
            },
            &[("x", huge)],
            1e-6,
        )
        .unwrap_err();
        assert!(e.to_string().contains("mul"), "{e}");
    }
}
