use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{Layout, Sample};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator so that gradients that are
/// zero up to round-off are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Worst mismatch found in one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Compare analytic gradients with central differences. With
/// `per_tensor = None` every entry is checked, otherwise a seeded sample of
/// that many entries per tensor.
pub fn gradient_check(
    layout: &Layout,
    params: &[f64],
    sample: &Sample,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<Vec<TensorCheck>> {
    let mut analytic = vec![0.0; layout.total];
    layout.loss_and_grad(params, sample, &mut analytic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = params.to_vec();
    let mut out = Vec::new();
    for t in &layout.tensors {
        let len = t.len();
        let entries: Vec<usize> = match per_tensor {
            Some(m) if m < len => {
                let mut v = sample_indices(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut check = TensorCheck {
            name: t.name.clone(),
            checked: entries.len(),
            max_rel_err: 0.0,
            worst_index: 0,
        };
        for i in entries {
            let idx = t.offset + i;
            let orig = p[idx];
            p[idx] = orig + FD_STEP;
            let up = layout.loss(&p, sample)?;
            p[idx] = orig - FD_STEP;
            let down = layout.loss(&p, sample)?;
            p[idx] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_index = i;
            }
        }
        out.push(check);
    }
    Ok(out)
}
