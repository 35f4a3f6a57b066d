//! Finite-difference gradient verification.
//!
//! Analytic gradients from [`Tape::backward`] are compared against central
//! differences of the same forward code. Checks can run on the f32 storage
//! type or on an f64 shadow instantiation of the identical graph; the
//! shadow path allows a smaller step and a much tighter tolerance.

use crate::error::Result;
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

/// Forward builder: binds the given parameters as grad-requiring leaves (in
/// order) and returns the scalar loss id.
pub type ForwardFn<'a, T> = dyn FnMut(&mut Tape<T>, &[TensorId]) -> Result<TensorId> + 'a;

/// Outcome of one finite-difference estimate.
#[derive(Clone, Copy, Debug)]
pub enum FdEstimate {
    Ok(f64),
    /// Curvature probe detected a kink (max-pool switch, activation corner)
    /// inside the stencil; the estimate is not trustworthy there.
    Kink,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// (param index, coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with a floor: coordinates where both estimates are below
/// `floor` in magnitude cannot be resolved by finite differences at the
/// working precision and count as agreeing.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < floor {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn eval_loss<T: Scalar>(
    params: &[Tensor<T>],
    forward: &mut ForwardFn<'_, T>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| {
            let mut t = p.clone();
            t.requires_grad = false;
            t.grad = None;
            tape.leaf(t)
        })
        .collect();
    let loss = forward(&mut tape, &ids)?;
    Ok(tape.value(loss).item().to_f64())
}

/// Loss and analytic gradients for every parameter.
pub fn analytic_grads<T: Scalar>(
    params: &[Tensor<T>],
    forward: &mut ForwardFn<'_, T>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| {
            let mut t = p.clone();
            t.requires_grad = true;
            t.grad = None;
            tape.leaf(t)
        })
        .collect();
    let loss = forward(&mut tape, &ids)?;
    let loss_val = tape.value(loss).item().to_f64();
    tape.backward(loss)?;
    let grads = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(|g| g.iter().map(|v| v.to_f64()).collect())
                .unwrap_or_else(|| vec![0.0; tape.value(id).numel()])
        })
        .collect();
    Ok((loss_val, grads))
}

/// Central difference of the loss along one parameter coordinate.
///
/// The estimate is taken at steps h and h/2; for a smooth loss the two
/// agree to O(h²), while a kink inside the stencil (max-pool argmax
/// switch, activation corner) leaves an O(1) discrepancy, which flags the
/// coordinate as unverifiable. The returned value is the h/2 estimate.
pub fn central_diff<T: Scalar>(
    params: &[Tensor<T>],
    forward: &mut ForwardFn<'_, T>,
    param: usize,
    coord: usize,
    h: f64,
    f0: f64,
) -> Result<FdEstimate> {
    let x0 = params[param].data()[coord].to_f64();
    let scale = x0.abs().max(1.0);
    let mut eval_at = |v: f64| -> Result<f64> {
        let mut shifted: Vec<Tensor<T>> = params.to_vec();
        shifted[param].data_mut()[coord] = T::from_f64(v);
        eval_loss(&shifted, forward)
    };
    let mut estimate = |step: f64| -> Result<f64> {
        let fp = eval_at(x0 + step)?;
        let fm = eval_at(x0 - step)?;
        Ok((fp - fm) / (2.0 * step))
    };
    // Halving ladder from h. For a smooth loss the differences of
    // successive estimates shrink ~4× per halving (O(h²) truncation); a
    // corner inside the stencil breaks that contraction — once a step
    // stops straddling it the estimates jump, and while every step still
    // straddles it the series diverges as 1/h. A coordinate is accepted
    // only after two consecutive contractions (or noise-level agreement);
    // otherwise it is reported as a kink.
    let mut s = h * scale;
    let mut prev = estimate(s)?;
    let mut prev_diff: Option<f64> = None;
    let mut streak = 0u32;
    for _ in 0..6 {
        s /= 2.0;
        let cur = estimate(s)?;
        let diff = (cur - prev).abs();
        let noise = machine_eps::<T>() * f0.abs().max(1.0) / s;
        let contracted = match prev_diff {
            None => false,
            Some(pd) => diff <= (0.35 * pd).max(24.0 * noise),
        };
        streak = if contracted { streak + 1 } else { 0 };
        if streak >= 2 {
            // Richardson extrapolation of the finest pair cancels the
            // O(h²) term, which dominates when gradients are very small.
            return Ok(FdEstimate::Ok((4.0 * cur - prev) / 3.0));
        }
        prev_diff = Some(diff);
        prev = cur;
    }
    Ok(FdEstimate::Kink)
}

pub fn machine_eps<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        f32::EPSILON as f64
    } else {
        f64::EPSILON
    }
}

/// Smallest gradient magnitude resolvable by central differences at step
/// `h` given loss magnitude `f0`. The finest ladder step is h/4 and
/// Richardson roughly doubles its rounding noise, so the floor sits three
/// orders of magnitude above the single-evaluation noise; coordinates
/// below it count as agreeing (an absolute-tolerance blend).
pub fn resolution_floor<T: Scalar>(h: f64, f0: f64) -> f64 {
    2048.0 * machine_eps::<T>() * f0.abs().max(1.0) / h
}

/// Compare analytic and finite-difference gradients on the given
/// coordinates (`None` = every coordinate of every parameter).
pub fn compare_grads<T: Scalar>(
    params: &[Tensor<T>],
    forward: &mut ForwardFn<'_, T>,
    coords: Option<&[(usize, usize)]>,
    h: f64,
    floor: f64,
) -> Result<FdReport> {
    let (f0, analytic) = analytic_grads(params, forward)?;
    let all: Vec<(usize, usize)> = match coords {
        Some(c) => c.to_vec(),
        None => params
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
            .collect(),
    };
    let mut report = FdReport::default();
    for (pi, ci) in all {
        match central_diff(params, forward, pi, ci, h, f0)? {
            FdEstimate::Kink => report.skipped_kinks += 1,
            FdEstimate::Ok(fd) => {
                let an = analytic[pi][ci];
                let err = rel_err(an, fd, floor);
                report.checked += 1;
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst = Some((pi, ci, an, fd));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floors_tiny_values() {
        assert_eq!(rel_err(1e-9, -1e-9, 1e-6), 0.0);
        assert!((rel_err(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn detects_matching_and_corrupted_gradients() {
        // loss = sum((x * x) . w) via mul + matmul
        let x = Tensor::<f64>::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.9, 0.2, -0.4]).unwrap();
        let w = Tensor::<f64>::new(vec![3, 1], vec![0.5, -1.0, 0.25]).unwrap();
        let params = vec![x, w];
        let mut forward = |tape: &mut Tape<f64>, ids: &[TensorId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            let y = tape.matmul(sq, ids[1])?;
            Ok(tape.sum(y))
        };
        let report = compare_grads(&params, &mut forward, None, 1e-4, 1e-9).unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
        assert_eq!(report.skipped_kinks, 0);
    }
}
