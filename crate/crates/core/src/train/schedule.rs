use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Piecewise-constant loss weights, switched at two epoch milestones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub alpha_sr: [f64; 3],
    pub alpha_ssr: [f64; 3],
    pub alpha_fus: [f64; 3],
    pub milestones: [usize; 2],
}

impl Default for Schedule {
    fn default() -> Self {
        Self::comb(2, 1, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alphas {
    pub sr: f64,
    pub ssr: f64,
    pub fus: f64,
}

impl Schedule {
    /// The named combinations of the loss-weight ablation: option 1 or 2 for
    /// each of the SR, SSR and fusion weights.
    pub fn comb(sr: u8, ssr: u8, fus: u8) -> Self {
        let decaying = |o: u8| if o == 2 { [2.0, 0.5, 0.0] } else { [1.0, 1.0, 0.5] };
        Self {
            alpha_sr: decaying(sr),
            alpha_ssr: decaying(ssr),
            alpha_fus: if fus == 2 { [0.0, 0.5, 2.0] } else { [0.5, 1.0, 1.0] },
            milestones: [300, 600],
        }
    }

    /// Weights constant over the whole run.
    pub fn constant(sr: f64, ssr: f64, fus: f64) -> Self {
        Self { alpha_sr: [sr; 3], alpha_ssr: [ssr; 3], alpha_fus: [fus; 3], milestones: [300, 600] }
    }

    pub fn alphas(&self, epoch: usize) -> Alphas {
        let i = if epoch < self.milestones[0] {
            0
        } else if epoch < self.milestones[1] {
            1
        } else {
            2
        };
        Alphas { sr: self.alpha_sr[i], ssr: self.alpha_ssr[i], fus: self.alpha_fus[i] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.milestones[0] > self.milestones[1] {
            return Err(Error::Config("schedule milestones must be non-decreasing".into()));
        }
        let all = self.alpha_sr.iter().chain(&self.alpha_ssr).chain(&self.alpha_fus);
        if all.clone().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `l1(u_Fus^K, G) + Σ_module (α/K) Σ_k l1(stage_k, reference)`, with `l1` the mean absolute error.
#[allow(clippy::too_many_arguments)]
pub fn loss_phase1<'t, T: Real>(
    sr_stages: &[Var<'t, T>],
    ssr_stages: &[Var<'t, T>],
    fus_stages: &[Var<'t, T>],
    hr_msi: Var<'t, T>,
    lr_hsi: Var<'t, T>,
    hr_hsi: Var<'t, T>,
    alphas: Alphas,
) -> Result<Var<'t, T>> {
    let k = fus_stages.len();
    if k == 0 || sr_stages.len() != k || ssr_stages.len() != k {
        return Err(Error::Shape(format!(
            "loss: stage lists of length {}, {}, {}",
            sr_stages.len(),
            ssr_stages.len(),
            k
        )));
    }
    let mut loss = fus_stages[k - 1].l1(hr_hsi)?;
    for (stages, reference, alpha) in
        [(sr_stages, hr_msi, alphas.sr), (ssr_stages, lr_hsi, alphas.ssr), (fus_stages, hr_hsi, alphas.fus)]
    {
        if alpha == 0.0 {
            continue;
        }
        let mut term = stages[0].l1(reference)?;
        for s in &stages[1..] {
            term = term.add(s.l1(reference)?)?;
        }
        loss = loss.add(term.scale(T::lit(alpha / k as f64)))?;
    }
    Ok(loss)
}
