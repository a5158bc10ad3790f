//! Physical parameters of the two species and derived coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two charged fluids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Ion,
    Electron,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::Ion, Species::Electron];

    pub fn name(self) -> &'static str {
        match self {
            Species::Ion => "ion",
            Species::Electron => "electron",
        }
    }

    /// Charge q_ν: +1 for ions, −1 for electrons.
    pub fn charge(self) -> f64 {
        match self {
            Species::Ion => 1.0,
            Species::Electron => -1.0,
        }
    }

    /// Exponent β_ν of the mass-ratio root in the scaled velocity.
    pub fn beta(self) -> i32 {
        match self {
            Species::Ion => 1,
            Species::Electron => 0,
        }
    }
}

impl std::fmt::Display for Species {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Polytropic constants of one species, p = A ρ^γ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytropicLaw {
    pub gamma: f64,
    pub entropy: f64,
}

impl PolytropicLaw {
    pub fn new(gamma: f64, entropy: f64) -> Self {
        Self { gamma, entropy }
    }

    /// The law for which n = ρ^{(γ−1)/2} and C = 1, i.e. A = (γ−1)²/(4γ).
    pub fn unit_normalized(gamma: f64) -> Self {
        Self {
            gamma,
            entropy: (gamma - 1.0).powi(2) / (4.0 * gamma),
        }
    }

    /// sqrt(4Aγ/(γ−1)²), the factor in n = factor · ρ^{(γ−1)/2}.
    pub fn sound_speed_factor(&self) -> f64 {
        (4.0 * self.entropy * self.gamma / (self.gamma - 1.0).powi(2)).sqrt()
    }

    /// C = ((γ−1)²/(4Aγ))^{1/(γ−1)}, so that ρ = C n^{2/(γ−1)}.
    pub fn poisson_coeff(&self) -> f64 {
        ((self.gamma - 1.0).powi(2) / (4.0 * self.entropy * self.gamma)).powf(1.0 / (self.gamma - 1.0))
    }

    /// Exponent 2/(γ−1) mapping n back to ρ.
    pub fn density_exponent(&self) -> f64 {
        2.0 / (self.gamma - 1.0)
    }

    /// (γ−1)/2, the coupling coefficient in the flux matrices.
    pub fn half_gamma_minus_one(&self) -> f64 {
        0.5 * (self.gamma - 1.0)
    }
}

/// Per-species constants plus mass ratio, dimension and diagnostic exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidParams {
    pub ion: PolytropicLaw,
    pub electron: PolytropicLaw,
    /// ε with m_e/m_i = ε².
    pub epsilon: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Lebesgue exponent q used by the weighted functionals.
    #[serde(default = "default_q")]
    pub lebesgue_q: f64,
    /// Sobolev order s used by the Γ-norm and the weighted functionals.
    #[serde(default = "default_s")]
    pub sobolev_s: usize,
    #[serde(default = "default_strict")]
    pub strict_paper_regime: bool,
}

fn default_dim() -> usize {
    3
}
fn default_q() -> f64 {
    2.0
}
fn default_s() -> usize {
    3
}
fn default_strict() -> bool {
    true
}

impl Default for FluidParams {
    fn default() -> Self {
        Self {
            ion: PolytropicLaw::unit_normalized(4.0 / 3.0),
            electron: PolytropicLaw::unit_normalized(4.0 / 3.0),
            epsilon: 1.0,
            dim: 3,
            lebesgue_q: 2.0,
            sobolev_s: 3,
            strict_paper_regime: true,
        }
    }
}

impl FluidParams {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn law(&self, species: Species) -> &PolytropicLaw {
        match species {
            Species::Ion => &self.ion,
            Species::Electron => &self.electron,
        }
    }

    /// ε^{β_ν}.
    pub fn eps_beta(&self, species: Species) -> f64 {
        self.epsilon.powi(species.beta())
    }

    pub fn poisson_coeff(&self, species: Species) -> f64 {
        self.law(species).poisson_coeff()
    }

    /// b_ν = min{d(γ_ν−1)/2, 1}.
    pub fn decay_b(&self, species: Species) -> f64 {
        (self.dim as f64 * (self.law(species).gamma - 1.0) / 2.0).min(1.0)
    }

    /// a_ν = 1 + b_ν.
    pub fn decay_a(&self, species: Species) -> f64 {
        1.0 + self.decay_b(species)
    }

    pub fn gamma_max(&self) -> f64 {
        self.ion.gamma.max(self.electron.gamma)
    }

    /// Checks the invariants; in strict mode also the admissibility window of
    /// the global existence theorem relating (s, d, q, γ).
    pub fn validate(&self) -> Result<()> {
        for species in Species::BOTH {
            let law = self.law(species);
            if !(law.gamma > 1.0) || !law.gamma.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "gamma_{species} = {} must exceed 1",
                    law.gamma
                )));
            }
            if !(law.entropy > 0.0) || !law.entropy.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "entropy constant A_{species} = {} must be positive",
                    law.entropy
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon = {} must lie in (0, 1]",
                self.epsilon
            )));
        }
        if self.dim < 1 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if self.sobolev_s < 1 {
            return Err(Error::InvalidParameter("Sobolev order must be at least 1".into()));
        }
        if !(self.lebesgue_q >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Lebesgue exponent q = {} must be at least 1",
                self.lebesgue_q
            )));
        }
        if self.strict_paper_regime {
            self.check_admissible_regime()?;
        }
        Ok(())
    }

    fn check_admissible_regime(&self) -> Result<()> {
        let d = self.dim as f64;
        let s = self.sobolev_s as f64;
        let q = self.lebesgue_q;
        let fail = |msg: String| Err(Error::InvalidParameter(format!("strict regime: {msg}")));
        if self.dim < 3 || self.sobolev_s < 3 {
            return fail(format!("need s, d >= 3 (s = {s}, d = {d})"));
        }
        if !(s > d / 2.0 + 1.0) {
            return fail(format!("need s > d/2 + 1 (s = {s}, d = {d})"));
        }
        let integer_exponents = Species::BOTH.iter().all(|&sp| {
            let e = self.law(sp).density_exponent();
            (e - e.round()).abs() < 1e-12
        });
        let s_cap = 2.0 / (self.gamma_max() - 1.0) + 1.5;
        if !integer_exponents && s > s_cap {
            return fail(format!("need s <= 2/(gamma_max - 1) + 3/2 = {s_cap}"));
        }
        let window = (2.0f64 / 3.0)
            .min(if self.dim > 1 { 4.0 / (d - 1.0) } else { f64::INFINITY })
            .min(4.0 / q)
            .min(2.0 * d / (d + q));
        for species in Species::BOTH {
            let g = self.law(species).gamma;
            if !(g < 1.0 + window) {
                return fail(format!("gamma_{species} = {g} must be below {}", 1.0 + window));
            }
        }
        Ok(())
    }
}
