// SPDX-License-Identifier: Apache-2.0

//! Behavioral model of the threshold-voltage update of a charge-trap-flash
//! cell under a single program pulse.
//!
//! The per-pulse increment separates into a state term and a gap term:
//!
//! ```text
//! dV_T/dn = P(V_T, pw) * Q(t_gap, pw)
//! P(V_T)  = A * exp(B * V_T)
//! Q(t)    = C1 * log10(min(t, t_critical)) + C2      (clamped at 0)
//! ```
//!
//! All constants depend on the pulse width `pw`; a [`FitFamily`] holds one
//! [`DeviceFit`] per calibrated width and interpolates between them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibrated constants of the update model for one pulse width.
///
/// Times are in seconds, voltages in volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceFit {
    #[serde(rename = "pw_s")]
    pub pw: f64,
    #[serde(rename = "A")]
    pub a_coeff: f64,
    #[serde(rename = "B")]
    pub b_coeff: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "t_critical_s")]
    pub t_critical: f64,
}

impl DeviceFit {
    pub fn new(
        pw: f64,
        a_coeff: f64,
        b_coeff: f64,
        c1: f64,
        c2: f64,
        t_critical: f64,
    ) -> Result<Self> {
        let fit = DeviceFit {
            pw,
            a_coeff,
            b_coeff,
            c1,
            c2,
            t_critical,
        };
        fit.validate()?;
        Ok(fit)
    }

    /// Constants with `C2` chosen so that the saturated gap multiplier is 1.
    ///
    /// `fit_from_samples` returns fits in this form: only the products
    /// `A*C1` and `A*C2` are identifiable from data.
    pub fn normalized(
        pw: f64,
        a_coeff: f64,
        b_coeff: f64,
        c1: f64,
        t_critical: f64,
    ) -> Result<Self> {
        Self::new(
            pw,
            a_coeff,
            b_coeff,
            c1,
            1.0 - c1 * t_critical.log10(),
            t_critical,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pw,
            self.a_coeff,
            self.b_coeff,
            self.c1,
            self.c2,
            self.t_critical,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite device constant in {self:?}"
            )));
        }
        if self.pw <= 0.0 {
            return Err(Error::Config(format!(
                "pulse width must be positive, got {}",
                self.pw
            )));
        }
        if self.t_critical <= 0.0 {
            return Err(Error::Config(format!(
                "t_critical must be positive, got {}",
                self.t_critical
            )));
        }
        if self.a_coeff <= 0.0 {
            return Err(Error::Config(format!(
                "A must be positive, got {}",
                self.a_coeff
            )));
        }
        Ok(())
    }

    /// Gap-free update per pulse, `A * exp(B * vt)`.
    pub fn p_ideal(&self, vt: f64) -> f64 {
        self.a_coeff * (self.b_coeff * vt).exp()
    }

    /// Gap multiplier. Gaps at or beyond `t_critical` use the saturated
    /// branch; the result never goes below zero.
    pub fn q_gap(&self, t_gap: f64) -> Result<f64> {
        if !(t_gap > 0.0) {
            return Err(Error::Domain(format!(
                "t_gap must be positive, got {t_gap}"
            )));
        }
        Ok(self.q_unchecked(t_gap))
    }

    pub(crate) fn q_unchecked(&self, t_gap: f64) -> f64 {
        let t = t_gap.min(self.t_critical);
        (self.c1 * t.log10() + self.c2).max(0.0)
    }

    /// Multiplier for any gap `>= t_critical`.
    pub fn q_saturated(&self) -> f64 {
        self.q_unchecked(self.t_critical)
    }

    /// Per-pulse threshold-voltage increment.
    pub fn dvt_step(&self, vt: f64, t_gap: f64) -> Result<f64> {
        Ok(self.p_ideal(vt) * self.q_gap(t_gap)?)
    }
}

/// Threshold voltage of one cell.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct VtState(pub f64);

impl VtState {
    pub fn volts(self) -> f64 {
        self.0
    }
}

/// Physical threshold-voltage window; states are clamped into it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtWindow {
    pub vt_min: f64,
    pub vt_max: f64,
}

impl Default for VtWindow {
    fn default() -> Self {
        VtWindow {
            vt_min: 0.0,
            vt_max: 4.0,
        }
    }
}

impl VtWindow {
    pub fn new(vt_min: f64, vt_max: f64) -> Result<Self> {
        if !(vt_min.is_finite() && vt_max.is_finite() && vt_min < vt_max) {
            return Err(Error::Config(format!(
                "invalid V_T window [{vt_min}, {vt_max}]"
            )));
        }
        Ok(VtWindow { vt_min, vt_max })
    }

    pub fn clamp(&self, vt: f64) -> VtState {
        VtState(vt.clamp(self.vt_min, self.vt_max))
    }
}

/// One measured per-pulse increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub vt: f64,
    pub t_gap: f64,
    pub pw: f64,
    pub dvt_observed: f64,
}

/// Noise-free samples of `fit` on the grid `vts x gaps`.
pub fn generate_samples(fit: &DeviceFit, vts: &[f64], gaps: &[f64]) -> Vec<FitSample> {
    let mut out = Vec::with_capacity(vts.len() * gaps.len());
    for &t_gap in gaps {
        for &vt in vts {
            out.push(FitSample {
                vt,
                t_gap,
                pw: fit.pw,
                dvt_observed: fit.p_ideal(vt) * fit.q_unchecked(t_gap),
            });
        }
    }
    out
}

struct GapGroup {
    gap: f64,
    vts: Vec<f64>,
    log_dvt: Vec<f64>,
}

/// Calibrates a [`DeviceFit`] from per-pulse measurements taken at one
/// pulse width.
///
/// The fit separates the variables. A single exponent `B` is shared by all
/// gap groups and fitted on `ln(dV)` against `vt` with one intercept per
/// gap. The exponentiated intercepts are then fitted by a hinge that is
/// linear in `log10(t_gap)` below the breakpoint and flat above it. When
/// `t_critical` is `None` the breakpoint is the observed gap with the lowest
/// residual. The result is normalized so that `Q(t_critical) = 1`.
pub fn fit_from_samples(samples: &[FitSample], t_critical: Option<f64>) -> Result<DeviceFit> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Calibration("no samples".into()))?;
    let pw = first.pw;
    if !(pw > 0.0) {
        return Err(Error::Calibration(format!(
            "pulse width must be positive, got {pw}"
        )));
    }
    for s in samples {
        if (s.pw - pw).abs() > 1e-12 * pw {
            return Err(Error::Calibration(format!(
                "samples mix pulse widths {pw} and {}; calibrate one width at a time",
                s.pw
            )));
        }
        if !(s.t_gap > 0.0) {
            return Err(Error::Calibration(format!(
                "t_gap must be positive, got {}",
                s.t_gap
            )));
        }
        if !(s.dvt_observed > 0.0) || !s.vt.is_finite() {
            return Err(Error::Calibration(format!(
                "sample {s:?} has no positive increment; log model undefined"
            )));
        }
    }
    if let Some(tc) = t_critical {
        if !(tc > 0.0) {
            return Err(Error::Calibration(format!(
                "t_critical must be positive, got {tc}"
            )));
        }
    }

    let mut groups: Vec<GapGroup> = Vec::new();
    for s in samples {
        match groups.iter_mut().find(|g| g.gap == s.t_gap) {
            Some(g) => {
                g.vts.push(s.vt);
                g.log_dvt.push(s.dvt_observed.ln());
            }
            None => groups.push(GapGroup {
                gap: s.t_gap,
                vts: vec![s.vt],
                log_dvt: vec![s.dvt_observed.ln()],
            }),
        }
    }
    groups.sort_by(|a, b| a.gap.total_cmp(&b.gap));

    // shared exponent B
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut means = Vec::with_capacity(groups.len());
    for g in &groups {
        let n = g.vts.len() as f64;
        let mx = g.vts.iter().sum::<f64>() / n;
        let my = g.log_dvt.iter().sum::<f64>() / n;
        for (x, y) in g.vts.iter().zip(&g.log_dvt) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
        means.push((mx, my));
    }
    if sxx <= 0.0 {
        return Err(Error::Calibration(
            "state regime missing: no gap has samples at two distinct V_T values, so B is not identifiable"
                .into(),
        ));
    }
    let b_coeff = sxy / sxx;

    // per-gap amplitude A * Q(gap)
    let points: Vec<(f64, f64, f64)> = groups
        .iter()
        .zip(&means)
        .map(|(g, &(mx, my))| (g.gap, g.gap.log10(), (my - b_coeff * mx).exp()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Calibration(
            "gap regime missing: need samples at two or more distinct t_gap values to fit C1, C2"
                .into(),
        ));
    }

    let (tc, a, b) = match t_critical {
        Some(tc) => {
            let (a, b, _) = hinge_fit(&points, tc.log10()).ok_or_else(|| {
                Error::Calibration(format!(
                    "gap regime missing: fewer than two distinct sub-critical gaps below t_critical = {tc}"
                ))
            })?;
            (tc, a, b)
        }
        None => {
            let mut best: Option<(f64, f64, f64, f64)> = None;
            for &(gap, lc, _) in points.iter().skip(1) {
                if let Some((a, b, sse)) = hinge_fit(&points, lc) {
                    let better = match best {
                        None => true,
                        Some((_, _, _, best_sse)) => {
                            sse < best_sse - 1e-12 * (1.0 + best_sse.abs())
                        }
                    };
                    if better {
                        best = Some((gap, a, b, sse));
                    }
                }
            }
            let (gap, a, b, _) = best.ok_or_else(|| {
                Error::Calibration(
                    "gap regime missing: could not place a saturation breakpoint".into(),
                )
            })?;
            (gap, a, b)
        }
    };

    let amplitude = a + b * tc.log10();
    if !(amplitude > 0.0) {
        return Err(Error::Calibration(format!(
            "fitted saturated amplitude {amplitude} is not positive"
        )));
    }
    DeviceFit::new(pw, amplitude, b_coeff, b / amplitude, a / amplitude, tc)
}

/// Least squares of `y = a + b * min(l, lc)`. Returns `None` when the
/// regressor takes fewer than two distinct values.
fn hinge_fit(points: &[(f64, f64, f64)], lc: f64) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(_, l, _)| l.min(lc)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.2).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, p) in xs.iter().zip(points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (p.2 - my);
    }
    let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(spread > 1e-12) {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse = xs
        .iter()
        .zip(points)
        .map(|(x, p)| {
            let r = p.2 - (a + b * x);
            r * r
        })
        .sum();
    Some((a, b, sse))
}

/// Fits for several pulse widths, sorted by width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFamily {
    #[serde(rename = "fit")]
    fits: Vec<DeviceFit>,
}

impl FitFamily {
    pub fn new(mut fits: Vec<DeviceFit>) -> Result<Self> {
        if fits.is_empty() {
            return Err(Error::Config("fit family is empty".into()));
        }
        for f in &fits {
            f.validate()?;
        }
        fits.sort_by(|a, b| a.pw.total_cmp(&b.pw));
        if fits.windows(2).any(|w| w[0].pw == w[1].pw) {
            return Err(Error::Config(
                "fit family has duplicate pulse widths".into(),
            ));
        }
        Ok(FitFamily { fits })
    }

    pub fn fits(&self) -> &[DeviceFit] {
        &self.fits
    }

    /// The calibrated fit whose width matches `pw` to 1e-9 relative.
    pub fn exact(&self, pw: f64) -> Option<&DeviceFit> {
        self.fits.iter().find(|f| (f.pw - pw).abs() <= 1e-9 * pw)
    }

    /// Fit at an arbitrary width. Between calibrated widths `ln A`, `B`,
    /// `C1`, `ln t_critical` and the saturated multiplier are interpolated
    /// linearly in `log10(pw)`; outside the calibrated range the nearest
    /// record's constants are reused with `pw` replaced.
    pub fn at_pulse_width(&self, pw: f64) -> Result<DeviceFit> {
        if !(pw > 0.0) {
            return Err(Error::Domain(format!(
                "pulse width must be positive, got {pw}"
            )));
        }
        if let Some(f) = self.exact(pw) {
            return Ok(*f);
        }
        let first = self.fits[0];
        let last = self.fits[self.fits.len() - 1];
        if pw <= first.pw {
            return Ok(DeviceFit { pw, ..first });
        }
        if pw >= last.pw {
            return Ok(DeviceFit { pw, ..last });
        }
        let hi = self
            .fits
            .iter()
            .position(|f| f.pw > pw)
            .expect("pw inside range");
        let (f0, f1) = (self.fits[hi - 1], self.fits[hi]);
        let t = (pw.log10() - f0.pw.log10()) / (f1.pw.log10() - f0.pw.log10());
        let lerp = |a: f64, b: f64| a + (b - a) * t;
        let a_coeff = lerp(f0.a_coeff.ln(), f1.a_coeff.ln()).exp();
        let b_coeff = lerp(f0.b_coeff, f1.b_coeff);
        let c1 = lerp(f0.c1, f1.c1);
        let t_critical = lerp(f0.t_critical.ln(), f1.t_critical.ln()).exp();
        let q_sat = lerp(f0.q_saturated(), f1.q_saturated());
        DeviceFit::new(
            pw,
            a_coeff,
            b_coeff,
            c1,
            q_sat - c1 * t_critical.log10(),
            t_critical,
        )
    }

    /// Largest `t_critical` over the family; the de-trap gap that resolves
    /// pulse interaction for every calibrated width.
    pub fn max_t_critical(&self) -> f64 {
        self.fits
            .iter()
            .map(|f| f.t_critical)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The widest calibrated pulse; used as the undivided reference.
    pub fn reference(&self) -> &DeviceFit {
        &self.fits[self.fits.len() - 1]
    }

    /// A program-time-conserving fit at `pw`: the reference amplitude
    /// scaled by `pw / pw_ref`, no gap dependence.
    pub fn ideal_fit(&self, pw: f64) -> Result<DeviceFit> {
        let r = self.reference();
        DeviceFit::new(pw, r.a_coeff * pw / r.pw, r.b_coeff, 0.0, 1.0, r.t_critical)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fit family serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let parsed: FitFamily =
            toml::from_str(text).map_err(|e| Error::Config(format!("fixture document: {e}")))?;
        FitFamily::new(parsed.fits)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
