use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Diffusion, McFormula, PdeProblem, ReferenceKind};
use crate::autodiff::{AdError, Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Base {
    id: &'static str,
    d: usize,
    maturity: f64,
    x0: Vec<f64>,
    params: BTreeMap<String, f64>,
    /// Same values keyed by the literal names, for hot-path lookups.
    fast: Vec<(&'static str, f64)>,
}

impl Base {
    fn new(
        id: &'static str,
        d: usize,
        x0: Vec<f64>,
        defaults: &[(&'static str, f64)],
        overrides: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let mut params: BTreeMap<String, f64> = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        params.insert("T".into(), 1.0);
        for (k, v) in overrides {
            let slot = params.get_mut(k).ok_or_else(|| Error::UnknownParam {
                problem: id.into(),
                key: k.clone(),
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidParam(format!("{id}.{k} = {v}")));
            }
            *slot = *v;
        }
        let maturity = params["T"];
        if maturity <= 0.0 {
            return Err(Error::InvalidParam(format!("{id}.T must be positive")));
        }
        let fast = defaults
            .iter()
            .map(|(k, _)| (*k, params[*k]))
            .chain(std::iter::once(("T", maturity)))
            .collect();
        Ok(Self {
            id,
            d,
            maturity,
            x0,
            params,
            fast,
        })
    }

    fn p(&self, k: &'static str) -> f64 {
        let hit = self
            .fast
            .iter()
            .find(|(name, _)| std::ptr::eq(name.as_ptr(), k.as_ptr()) && name.len() == k.len());
        match hit {
            Some((_, v)) => *v,
            None => self.fast.iter().find(|(name, _)| *name == k).map_or_else(|| self.params[k], |(_, v)| *v),
        }
    }
}

macro_rules! base_accessors {
    () => {
        fn id(&self) -> &str {
            self.base.id
        }
        fn dim(&self) -> usize {
            self.base.d
        }
        fn maturity(&self) -> f64 {
            self.base.maturity
        }
        fn x0(&self) -> &[f64] {
            &self.base.x0
        }
        fn params(&self) -> &BTreeMap<String, f64> {
            &self.base.params
        }
    };
}

fn alternating(d: usize) -> Vec<f64> {
    (0..d).map(|i| if i % 2 == 0 { 1.0 } else { 0.5 }).collect()
}

fn row_sums(x: &Tensor) -> Vec<f64> {
    (0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect()
}

fn column(tape: &mut Tape, v: Vec<f64>) -> Var {
    tape.constant(Tensor::column(v))
}

/// Black-Scholes with default risk: GBM dynamics, `g = min_i x_i`.
#[derive(Debug, Clone)]
pub struct BsDefault {
    base: Base,
}

impl BsDefault {
    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new(
            "bs_default",
            d,
            vec![100.0; d],
            &[
                ("mu_bar", 0.02),
                ("sigma_bar", 0.2),
                ("delta", 2.0 / 3.0),
                ("R", 0.02),
                ("gamma_h", 0.2),
                ("gamma_l", 0.02),
                ("v_h", 50.0),
                ("v_l", 70.0),
            ],
            overrides,
        )?;
        if base.p("gamma_l") > base.p("gamma_h") || base.p("v_h") == base.p("v_l") {
            return Err(Error::InvalidParam("bs_default needs gamma_l <= gamma_h and v_h != v_l".into()));
        }
        Ok(Self { base })
    }

    /// Default-intensity rate `Q(y)` before multiplication by `y`.
    pub fn intensity(&self, y: f64) -> f64 {
        let b = &self.base;
        let slope = (b.p("gamma_h") - b.p("gamma_l")) / (b.p("v_h") - b.p("v_l"));
        (slope * (y - b.p("v_h")) + b.p("gamma_h")).clamp(b.p("gamma_l"), b.p("gamma_h"))
    }
}

impl PdeProblem for BsDefault {
    base_accessors!();

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let m = self.base.p("mu_bar");
        out.iter_mut().zip(x).for_each(|(o, v)| *o = m * v);
    }

    fn diffusion(&self, _t: f64, x: &[f64]) -> Diffusion {
        let s = self.base.p("sigma_bar");
        Diffusion::Diagonal(x.iter().map(|v| s * v).collect())
    }

    fn has_exact_step(&self) -> bool {
        true
    }

    fn exact_step(&self, x: &[f64], s: f64, t: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        let (m, sg) = (self.base.p("mu_bar"), self.base.p("sigma_bar"));
        let drift = (m - 0.5 * sg * sg) * (t - s);
        for ((o, xv), w) in out.iter_mut().zip(x).zip(dw) {
            *o = xv * (drift + sg * w).exp();
        }
        Ok(())
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut best = 0;
        for (i, v) in x.iter().enumerate() {
            if *v < x[best] {
                best = i;
            }
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        out[best] = 1.0;
        true
    }

    fn driver(&self, tape: &mut Tape, _t: &[f64], _x: &Tensor, y: Var, _du: Var) -> Result<Var, AdError> {
        let b = &self.base;
        let (gh, gl, vh, vl) = (b.p("gamma_h"), b.p("gamma_l"), b.p("v_h"), b.p("v_l"));
        let slope = (gh - gl) / (vh - vl);
        let shifted = tape.offset(y, -vh)?;
        let lin = tape.scale(shifted, slope)?;
        let lin = tape.offset(lin, gh)?;
        let q = tape.clamp(lin, gl, gh)?;
        let qy = tape.mul(q, y)?;
        let a = tape.scale(qy, -(1.0 - b.p("delta")))?;
        let ry = tape.scale(y, -b.p("R"))?;
        tape.add(a, ry)
    }

    fn reference(&self) -> ReferenceKind {
        let defaults = BsDefault::new(self.base.d, &BTreeMap::new()).expect("defaults");
        if self.base.d == 100 && defaults.base.params == self.base.params {
            ReferenceKind::Y0Only(47.300)
        } else {
            ReferenceKind::None
        }
    }
}

/// Black-Scholes-Barenblatt: `u = exp((r + sigma^2)(T - t)) |x|^2`.
#[derive(Debug, Clone)]
pub struct BsBarenblatt {
    base: Base,
}

impl BsBarenblatt {
    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new(
            "bs_barenblatt",
            d,
            alternating(d),
            &[("sigma_bar", 0.4), ("r", 0.05)],
            overrides,
        )?;
        Ok(Self { base })
    }

    fn growth(&self, t: f64) -> f64 {
        let (s, r) = (self.base.p("sigma_bar"), self.base.p("r"));
        ((r + s * s) * (self.base.maturity - t)).exp()
    }
}

impl PdeProblem for BsBarenblatt {
    base_accessors!();

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn diffusion(&self, _t: f64, x: &[f64]) -> Diffusion {
        let s = self.base.p("sigma_bar");
        Diffusion::Diagonal(x.iter().map(|v| s * v).collect())
    }

    fn has_exact_step(&self) -> bool {
        true
    }

    fn exact_step(&self, x: &[f64], s: f64, t: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        let sg = self.base.p("sigma_bar");
        let drift = -0.5 * sg * sg * (t - s);
        for ((o, xv), w) in out.iter_mut().zip(x).zip(dw) {
            *o = xv * (drift + sg * w).exp();
        }
        Ok(())
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = 2.0 * v);
        true
    }

    fn driver(&self, tape: &mut Tape, _t: &[f64], x: &Tensor, y: Var, du: Var) -> Result<Var, AdError> {
        // sum_i z_i / sigma_bar with z = sigma^T Du = sigma_bar x_i Du_i
        let xc = tape.constant(x.clone());
        let xdu = tape.mul(xc, du)?;
        let s = tape.reduce_sum(xdu, Axis::Cols)?;
        let diff = tape.sub(y, s)?;
        tape.scale(diff, -self.base.p("r"))
    }

    fn exact_solution(&self, t: f64, x: &[f64]) -> Option<f64> {
        Some(self.growth(t) * self.terminal(x))
    }

    fn exact_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let e = self.growth(t);
        out.iter_mut().zip(x).for_each(|(o, v)| *o = 2.0 * v * e);
        true
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::Exact
    }
}

/// Hamilton-Jacobi-Bellman: `sigma = sqrt(2) I`, `f~ = -lambda |Du|^2`.
#[derive(Debug, Clone)]
pub struct Hjb {
    base: Base,
}

impl Hjb {
    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new("hjb", d, vec![0.0; d], &[("lambda", 1.0)], overrides)?;
        if base.p("lambda") <= 0.0 {
            return Err(Error::InvalidParam("hjb.lambda must be positive".into()));
        }
        Ok(Self { base })
    }
}

impl PdeProblem for Hjb {
    base_accessors!();

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scaled(std::f64::consts::SQRT_2)
    }

    fn constant_coefficients(&self) -> bool {
        true
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        (0.5 * (1.0 + x.iter().map(|v| v * v).sum::<f64>())).ln()
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let n = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        out.iter_mut().zip(x).for_each(|(o, v)| *o = 2.0 * v / n);
        true
    }

    fn driver(&self, tape: &mut Tape, _t: &[f64], _x: &Tensor, _y: Var, du: Var) -> Result<Var, AdError> {
        // -0.5 lambda |z|^2 with z = sqrt(2) Du
        let sq = tape.square(du)?;
        let s = tape.reduce_sum(sq, Axis::Cols)?;
        tape.scale(s, -self.base.p("lambda"))
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::MonteCarlo
    }

    fn mc_formula(&self) -> Option<McFormula> {
        Some(McFormula {
            coupling: -self.base.p("lambda"),
            noise_scale: std::f64::consts::SQRT_2,
        })
    }
}

/// Oscillating solution `cos(sum x) e^{a(T-t)}` with a clamped square
/// non-linearity.
#[derive(Debug, Clone)]
pub struct OscSquare {
    base: Base,
}

impl OscSquare {
    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new(
            "osc_square",
            d,
            alternating(d),
            &[("mu0", 0.2), ("sigma0", 1.0), ("a", 0.5), ("r", 0.1)],
            overrides,
        )?;
        if base.p("sigma0") <= 0.0 {
            return Err(Error::InvalidParam("osc_square.sigma0 must be positive".into()));
        }
        Ok(Self { base })
    }

    fn source(&self, t: f64, s: f64) -> f64 {
        let b = &self.base;
        let (mu0, s0, a, r) = (b.p("mu0"), b.p("sigma0"), b.p("a"), b.p("r"));
        let e = (a * (b.maturity - t)).exp();
        let (sn, cs) = s.sin_cos();
        let q = cs * sn * e * e;
        cs * (a + 0.5 * s0 * s0) * e + sn * mu0 * e - r * q * q
    }

    /// Saturation bound `exp(2a(T - t))` of the clamped term.
    pub fn bound(&self, t: f64) -> f64 {
        (2.0 * self.base.p("a") * (self.base.maturity - t)).exp()
    }
}

impl PdeProblem for OscSquare {
    base_accessors!();

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        let m = self.base.p("mu0") / self.base.d as f64;
        out.iter_mut().for_each(|o| *o = m);
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scaled(self.base.p("sigma0") / (self.base.d as f64).sqrt())
    }

    fn constant_coefficients(&self) -> bool {
        true
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>().cos()
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let v = -x.iter().sum::<f64>().sin();
        out.iter_mut().for_each(|o| *o = v);
        true
    }

    fn driver(&self, tape: &mut Tape, t: &[f64], x: &Tensor, y: Var, du: Var) -> Result<Var, AdError> {
        let d = self.base.d as f64;
        let sums = row_sums(x);
        let src: Vec<f64> = t.iter().zip(&sums).map(|(&t, &s)| self.source(t, s)).collect();
        let bounds: Vec<f64> = t.iter().map(|&t| self.bound(t)).collect();
        let inv: Vec<f64> = bounds.iter().map(|b| 1.0 / (b * d)).collect();
        // y * sum(z) / (sigma0 sqrt d) = y * sum(Du) / d, clamped to +-bound
        let s = tape.reduce_sum(du, Axis::Cols)?;
        let v = tape.mul(y, s)?;
        let inv = column(tape, inv);
        let scaled = tape.mul(v, inv)?;
        let c = tape.clamp(scaled, -1.0, 1.0)?;
        let bv = column(tape, bounds);
        let c = tape.mul(c, bv)?;
        let sq = tape.square(c)?;
        let nl = tape.scale(sq, self.base.p("r"))?;
        let src = column(tape, src);
        tape.add(src, nl)
    }

    fn exact_solution(&self, t: f64, x: &[f64]) -> Option<f64> {
        let e = (self.base.p("a") * (self.base.maturity - t)).exp();
        Some(x.iter().sum::<f64>().cos() * e)
    }

    fn exact_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let e = (self.base.p("a") * (self.base.maturity - t)).exp();
        let v = -x.iter().sum::<f64>().sin() * e;
        out.iter_mut().for_each(|o| *o = v);
        true
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::Exact
    }
}

/// Non-Lipschitz terminal `g = sum_i clamp(x_i, 0, 1)^alpha` with a quadratic
/// gradient driver.
#[derive(Debug, Clone)]
pub struct NonLipschitz {
    base: Base,
}

impl NonLipschitz {
    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new("nonlip", d, vec![0.0; d], &[("alpha", 0.5)], overrides)?;
        if base.p("alpha") <= 0.0 {
            return Err(Error::InvalidParam("nonlip.alpha must be positive".into()));
        }
        Ok(Self { base })
    }
}

impl PdeProblem for NonLipschitz {
    base_accessors!();

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scaled(1.0)
    }

    fn constant_coefficients(&self) -> bool {
        true
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let a = self.base.p("alpha");
        x.iter().map(|v| v.clamp(0.0, 1.0).powf(a)).sum()
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let a = self.base.p("alpha");
        for (o, &v) in out.iter_mut().zip(x) {
            *o = if v <= 0.0 || v >= 1.0 { 0.0 } else { a * v.powf(a - 1.0) };
        }
        true
    }

    fn driver(&self, tape: &mut Tape, _t: &[f64], _x: &Tensor, _y: Var, du: Var) -> Result<Var, AdError> {
        // Sign chosen so that u = log E[exp g(x + B)] solves the equation.
        let sq = tape.square(du)?;
        let s = tape.reduce_sum(sq, Axis::Cols)?;
        tape.scale(s, 0.5)
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::MonteCarlo
    }

    fn mc_formula(&self) -> Option<McFormula> {
        Some(McFormula {
            coupling: 1.0,
            noise_scale: 1.0,
        })
    }
}

/// Oscillating solution `cos(sum x) e^{-alpha(T-t)}` under CIR dynamics.
#[derive(Debug, Clone)]
pub struct CirOscillating {
    base: Base,
}

impl CirOscillating {
    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new(
            "cir_osc",
            d,
            vec![0.3; d],
            &[("a", 0.1), ("alpha", 0.2), ("k_hat", 0.1), ("m_hat", 0.3), ("sigma_hat", 0.2)],
            overrides,
        )?;
        let (k, m, s) = (base.p("k_hat"), base.p("m_hat"), base.p("sigma_hat"));
        if 2.0 * k * m <= s * s {
            return Err(Error::InvalidParam(format!(
                "cir_osc needs 2 k_hat m_hat > sigma_hat^2, got {} <= {}",
                2.0 * k * m,
                s * s
            )));
        }
        Ok(Self { base })
    }

    fn source(&self, t: f64, x: &[f64]) -> f64 {
        let b = &self.base;
        let (a, al, k, m, sg) = (b.p("a"), b.p("alpha"), b.p("k_hat"), b.p("m_hat"), b.p("sigma_hat"));
        let e = (-al * (b.maturity - t)).exp();
        let s: f64 = x.iter().sum();
        let (sn, cs) = s.sin_cos();
        let drift: f64 = x.iter().map(|v| k * (m - v)).sum();
        let vol: f64 = x.iter().map(|v| sg * v.max(0.0).sqrt()).sum();
        cs * (-al + 0.5 * sg * sg * s) * e + sn * e * drift + a * cs * sn * e * e * vol
    }
}

impl PdeProblem for CirOscillating {
    base_accessors!();

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let (k, m) = (self.base.p("k_hat"), self.base.p("m_hat"));
        out.iter_mut().zip(x).for_each(|(o, v)| *o = k * (m - v));
    }

    fn diffusion(&self, _t: f64, x: &[f64]) -> Diffusion {
        let s = self.base.p("sigma_hat");
        Diffusion::Diagonal(x.iter().map(|v| s * v.max(0.0).sqrt()).collect())
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>().cos()
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let v = -x.iter().sum::<f64>().sin();
        out.iter_mut().for_each(|o| *o = v);
        true
    }

    fn driver(&self, tape: &mut Tape, t: &[f64], x: &Tensor, y: Var, du: Var) -> Result<Var, AdError> {
        let src: Vec<f64> = t.iter().enumerate().map(|(r, &t)| self.source(t, x.row_slice(r))).collect();
        let sq = tape.constant(x.map(|v| v.max(0.0).sqrt()));
        let z = tape.mul(du, sq)?;
        let s = tape.reduce_sum(z, Axis::Cols)?;
        let ys = tape.mul(y, s)?;
        let nl = tape.scale(ys, self.base.p("a") * self.base.p("sigma_hat"))?;
        let src = column(tape, src);
        tape.add(src, nl)
    }

    fn exact_solution(&self, t: f64, x: &[f64]) -> Option<f64> {
        let e = (-self.base.p("alpha") * (self.base.maturity - t)).exp();
        Some(x.iter().sum::<f64>().cos() * e)
    }

    fn exact_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let e = (-self.base.p("alpha") * (self.base.maturity - t)).exp();
        let v = -x.iter().sum::<f64>().sin() * e;
        out.iter_mut().for_each(|o| *o = v);
        true
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::Exact
    }
}

/// Oscillating solution `(2 sum x + cos(sum x)) e^{a(T-t)}` with an inverse
/// non-linearity.
#[derive(Debug, Clone)]
pub struct OscInverse {
    base: Base,
}

impl OscInverse {
    pub const DENOMINATOR_FLOOR: f64 = 1e-8;

    pub fn new(d: usize, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let base = Base::new(
            "osc_inverse",
            d,
            alternating(d),
            &[("mu0", 0.2), ("sigma0", 1.0), ("a", 0.5), ("r", 0.1)],
            overrides,
        )?;
        if base.p("sigma0") <= 0.0 {
            return Err(Error::InvalidParam("osc_inverse.sigma0 must be positive".into()));
        }
        Ok(Self { base })
    }

    fn source(&self, t: f64, s: f64) -> f64 {
        let b = &self.base;
        let (mu0, s0, a, r) = (b.p("mu0"), b.p("sigma0"), b.p("a"), b.p("r"));
        let d = b.d as f64;
        let e = (a * (b.maturity - t)).exp();
        let (sn, cs) = s.sin_cos();
        2.0 * a * s * e + cs * (a + 0.5 * d * s0 * s0) * e - mu0 * (2.0 - sn) * e - r * (2.0 * s + cs) / (s0 * (2.0 - sn))
    }
}

impl PdeProblem for OscInverse {
    base_accessors!();

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        let m = self.base.p("mu0") / self.base.d as f64;
        out.iter_mut().for_each(|o| *o = m);
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scaled(self.base.p("sigma0"))
    }

    fn constant_coefficients(&self) -> bool {
        true
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        2.0 * s + s.cos()
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let v = 2.0 - x.iter().sum::<f64>().sin();
        out.iter_mut().for_each(|o| *o = v);
        true
    }

    fn driver(&self, tape: &mut Tape, t: &[f64], x: &Tensor, y: Var, du: Var) -> Result<Var, AdError> {
        let b = &self.base;
        let sums = row_sums(x);
        let src: Vec<f64> = t.iter().zip(&sums).map(|(&t, &s)| self.source(t, s)).collect();
        // sum(z) = sigma0 sum(Du), kept at least DENOMINATOR_FLOOR in magnitude
        let s = tape.reduce_sum(du, Axis::Cols)?;
        let den = tape.scale(s, b.p("sigma0"))?;
        let (keep, floor): (Vec<f64>, Vec<f64>) = tape
            .value(den)
            .data()
            .iter()
            .map(|&v| {
                if v.abs() >= Self::DENOMINATOR_FLOOR {
                    (1.0, 0.0)
                } else {
                    (0.0, Self::DENOMINATOR_FLOOR.copysign(if v == 0.0 { 1.0 } else { v }))
                }
            })
            .unzip();
        let keep = column(tape, keep);
        let floor = column(tape, floor);
        let masked = tape.mul(den, keep)?;
        let den = tape.add(masked, floor)?;
        let num = tape.scale(y, b.p("r") * b.d as f64)?;
        let nl = tape.div(num, den)?;
        let src = column(tape, src);
        tape.add(src, nl)
    }

    fn exact_solution(&self, t: f64, x: &[f64]) -> Option<f64> {
        let e = (self.base.p("a") * (self.base.maturity - t)).exp();
        Some(self.terminal(x) * e)
    }

    fn exact_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let e = (self.base.p("a") * (self.base.maturity - t)).exp();
        let v = (2.0 - x.iter().sum::<f64>().sin()) * e;
        out.iter_mut().for_each(|o| *o = v);
        true
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::Exact
    }
}

/// Wraps a problem, replacing its driver by zero and optionally its terminal
/// condition by a constant. The dynamics are unchanged.
#[derive(Debug, Clone)]
pub struct ZeroDriver {
    inner: Arc<dyn PdeProblem>,
    constant_terminal: Option<f64>,
}

impl ZeroDriver {
    pub fn new(inner: Arc<dyn PdeProblem>) -> Self {
        Self {
            inner,
            constant_terminal: None,
        }
    }

    pub fn with_constant_terminal(inner: Arc<dyn PdeProblem>, c: f64) -> Self {
        Self {
            inner,
            constant_terminal: Some(c),
        }
    }
}

impl PdeProblem for ZeroDriver {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn maturity(&self) -> f64 {
        self.inner.maturity()
    }

    fn x0(&self) -> &[f64] {
        self.inner.x0()
    }

    fn params(&self) -> &BTreeMap<String, f64> {
        self.inner.params()
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.drift(t, x, out)
    }

    fn diffusion(&self, t: f64, x: &[f64]) -> Diffusion {
        self.inner.diffusion(t, x)
    }

    fn constant_coefficients(&self) -> bool {
        self.inner.constant_coefficients()
    }

    fn has_exact_step(&self) -> bool {
        self.inner.has_exact_step()
    }

    fn exact_step(&self, x: &[f64], s: f64, t: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        self.inner.exact_step(x, s, t, dw, out)
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        self.constant_terminal.unwrap_or_else(|| self.inner.terminal(x))
    }

    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        match self.constant_terminal {
            Some(_) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                true
            }
            None => self.inner.terminal_gradient(x, out),
        }
    }

    fn driver(&self, tape: &mut Tape, t: &[f64], _x: &Tensor, _y: Var, _du: Var) -> Result<Var, AdError> {
        Ok(tape.constant(Tensor::zeros(t.len(), 1)))
    }

    fn exact_solution(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        self.constant_terminal
    }

    fn exact_gradient(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        if self.constant_terminal.is_some() {
            out.iter_mut().for_each(|o| *o = 0.0);
            true
        } else {
            false
        }
    }

    fn reference(&self) -> ReferenceKind {
        if self.constant_terminal.is_some() {
            ReferenceKind::Exact
        } else {
            ReferenceKind::None
        }
    }
}
