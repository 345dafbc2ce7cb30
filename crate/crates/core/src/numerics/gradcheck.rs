use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamSet;
use crate::error::{Error, Result};

/// Above this many scalars a seeded subsample of coordinates is checked.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSAMPLE_SEED: u64 = 0x6772_6164;

/// Compares `analytic` against central differences of `loss_fn` around `params`.
///
/// The difference quotient is Richardson-extrapolated from steps `eps` and
/// `eps / 2`, which cancels the `O(eps²)` truncation term.
///
/// Returns the worst relative error `|a - fd| / max(|a|, |fd|, 1e-8)` over
/// every scalar, or over a seeded sample of [`FULL_CHECK_LIMIT`] scalars for
/// larger parameter sets.
pub fn grad_check(
    loss_fn: impl Fn(&ParamSet) -> Result<f64>,
    params: &ParamSet,
    analytic: &ParamSet,
    eps: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    let chosen: Vec<usize> = if coords.len() > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
        let mut idx = sample(&mut rng, coords.len(), FULL_CHECK_LIMIT).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..coords.len()).collect()
    };

    let eval = |p: &ParamSet| -> Result<f64> {
        let l = loss_fn(p)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss {l} during gradient check")));
        }
        Ok(l)
    };
    eval(params)?;

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for k in chosen {
        let (name, i) = &coords[k];
        let orig = params.require(name)?.data()[*i];
        let mut central = |h: f64| -> Result<f64> {
            probe.get_mut(name).expect("same keys").data_mut()[*i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[*i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[*i] = orig;
            Ok((up - down) / (2.0 * h))
        };
        let coarse = central(eps)?;
        let fine = central(eps / 2.0)?;
        let fd = (4.0 * fine - coarse) / 3.0;
        let a = analytic.require(name)?.data()[*i];
        let denom = a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max((a - fd).abs() / denom);
    }
    Ok(worst)
}
