//! Problem definition: physical constants, potential, initial data and grid.

use crate::error::{Result, WorldlineError};
use crate::potential::Potential;
use crate::sbp::{Order, SbpOperator};
use serde::{Deserialize, Serialize};

fn one() -> f64 {
    1.0
}

fn zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "one")]
    pub m: f64,
    #[serde(default = "one")]
    pub c: f64,
    pub t_i: f64,
    pub x_i: f64,
    pub tdot_i: f64,
    pub xdot_i: f64,
    pub n_gamma: usize,
    #[serde(default = "zero")]
    pub gamma_i: f64,
    #[serde(default = "one")]
    pub gamma_f: f64,
    pub order: Order,
    pub potential: Potential,
}

impl ProblemConfig {
    fn base(potential: Potential) -> Self {
        ProblemConfig {
            m: 1.0,
            c: 1.0,
            t_i: 0.0,
            x_i: 1.0,
            tdot_i: 1.0,
            xdot_i: 0.1,
            n_gamma: 32,
            gamma_i: 0.0,
            gamma_f: 1.0,
            order: Order::Sbp21,
            potential,
        }
    }

    /// Linear potential `V = x / 4`, starting at `x = 1` with velocity `1/10`.
    pub fn linear_example() -> Self {
        Self::base(Potential::Linear { alpha: 0.25 })
    }

    /// Quartic potential `V = x^4 / 2`, same initial data as the linear case.
    pub fn quartic_example() -> Self {
        Self::base(Potential::Quartic { kappa: 0.5 })
    }

    pub fn free_example() -> Self {
        Self::base(Potential::Free)
    }

    pub fn with_order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n_gamma = n;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ProblemConfig =
            serde_json::from_str(s).map_err(|e| WorldlineError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| WorldlineError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(WorldlineError::InvalidConfig(msg));
        let finite = [
            ("m", self.m),
            ("c", self.c),
            ("t_i", self.t_i),
            ("x_i", self.x_i),
            ("tdot_i", self.tdot_i),
            ("xdot_i", self.xdot_i),
            ("gamma_i", self.gamma_i),
            ("gamma_f", self.gamma_f),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.m <= 0.0 {
            return bad(format!("mass must be positive, got {}", self.m));
        }
        if self.c <= 0.0 {
            return bad(format!("speed of light must be positive, got {}", self.c));
        }
        if self.tdot_i <= 0.0 {
            return bad(format!("tdot_i must be positive, got {}", self.tdot_i));
        }
        if self.gamma_f <= self.gamma_i {
            return bad("gamma_f must exceed gamma_i".into());
        }
        let min = self.order.min_points();
        if self.n_gamma < min {
            return bad(format!(
                "{} needs n_gamma >= {min}, got {}",
                self.order, self.n_gamma
            ));
        }
        let v = self.v_i();
        if v.abs() >= self.c {
            return bad(format!("initial velocity |{v}| must be below c = {}", self.c));
        }
        if self.g00(self.x_i) <= 0.0 {
            return bad("g00 must be positive at the initial position".into());
        }
        Ok(())
    }

    /// Physical initial velocity `dx/dt = xdot_i / tdot_i`.
    pub fn v_i(&self) -> f64 {
        self.xdot_i / self.tdot_i
    }

    pub fn dgamma(&self) -> f64 {
        (self.gamma_f - self.gamma_i) / (self.n_gamma - 1) as f64
    }

    pub fn gamma_grid(&self) -> Vec<f64> {
        let dg = self.dgamma();
        (0..self.n_gamma)
            .map(|k| {
                if k + 1 == self.n_gamma {
                    self.gamma_f
                } else {
                    self.gamma_i + k as f64 * dg
                }
            })
            .collect()
    }

    pub fn operator(&self) -> Result<SbpOperator> {
        Ok(self.order.build(self.n_gamma, self.dgamma())?)
    }

    /// `c^2 + 2 V(x) / m`
    pub fn g00(&self, x: f64) -> f64 {
        self.c * self.c + 2.0 * self.potential.v(x) / self.m
    }

    /// `d g00 / dx`
    pub fn dg00(&self, x: f64) -> f64 {
        2.0 * self.potential.dv(x) / self.m
    }

    pub fn d2g00(&self, x: f64) -> f64 {
        2.0 * self.potential.d2v(x) / self.m
    }
}

/// Elementwise `g00(x_k)`; the spatial component `g11 = -1` is implicit.
pub fn metric_g00(x: &[f64], cfg: &ProblemConfig) -> Vec<f64> {
    x.iter().map(|&v| cfg.g00(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g00_examples() {
        let free = ProblemConfig::free_example();
        assert_eq!(metric_g00(&[0.0, 1.0, -3.0], &free), vec![1.0; 3]);
        assert_eq!(metric_g00(&[1.0], &ProblemConfig::linear_example()), vec![1.5]);
        assert_eq!(metric_g00(&[1.0], &ProblemConfig::quartic_example()), vec![2.0]);
    }

    #[test]
    fn json_defaults_and_round_trip() {
        let cfg = ProblemConfig::from_json(
            r#"{"t_i":0,"x_i":1,"tdot_i":1,"xdot_i":0.1,"n_gamma":32,
                "order":"sbp21","potential":{"type":"linear","alpha":0.25}}"#,
        )
        .unwrap();
        assert_eq!(cfg, ProblemConfig::linear_example());
        let back = ProblemConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_invalid() {
        let mut cfg = ProblemConfig::linear_example();
        cfg.tdot_i = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProblemConfig::linear_example();
        cfg.xdot_i = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = ProblemConfig::linear_example().with_order(Order::Sbp42).with_n(8);
        assert!(cfg.validate().is_err());
        let mut cfg = ProblemConfig::linear_example();
        cfg.gamma_f = 0.0;
        assert!(cfg.validate().is_err());
        assert!(ProblemConfig::from_json("{").is_err());
        assert!(ProblemConfig::from_json(r#"{"t_i":0}"#).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let cfg = ProblemConfig::linear_example().with_n(7);
        let g = cfg.gamma_grid();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[6], 1.0);
        assert!((cfg.dgamma() - 1.0 / 6.0).abs() < 1e-16);
    }
}
