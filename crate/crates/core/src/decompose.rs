//! Variational recovery of the latent frame stack from one blur /
//! rolling-shutter pair.
//!
//! The unknowns are a single base displacement field (scene motion over one
//! normalized exposure, positive u meaning rightward content motion) and
//! per-pixel fusion logits. Every latent frame is reconstructed by warping
//! the two observations toward its instant and blending them; the energy
//! penalizes re-synthesis error of both observations plus total variation of
//! the base flow, and is minimized coarse-to-fine with Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TraceEntry};
use crate::flowwarp::{sample_bilinear, sample_bilinear_grad, FlowField, FusionMask};
use crate::formation::{LatentSequence, ObservationPair};
use crate::image::{Grid, Image};
use crate::pyramid::{downsample_half, level_shapes, upsample_bilinear_grid};
use crate::timing::latent_for_row;

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Line search gives up when the step underflows this.
const MIN_STEP: f64 = 1e-14;
/// Ceiling for the adaptive step, in pixels.
const MAX_STEP: f64 = 64.0;
/// Coarsest pyramid level must keep at least this many pixels per side.
const MIN_LEVEL_EXTENT: usize = 8;
/// Energy gap below which the two disambiguation basins are considered tied.
const TIE_GAP: f64 = 1e-4;
/// Mean-flow magnitude below which no direction is reported.
const SIGN_DEADBAND: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeConfig {
    /// Pyramid depth; levels beyond an 8-px coarsest extent are skipped.
    pub n_levels: usize,
    /// Accepted gradient steps per pyramid level.
    pub iters_per_level: usize,
    /// Initial line-search step: the largest per-iteration change of any
    /// variable, in pixels (flow) or logit units (mask).
    pub step_size: f64,
    /// Weight of the flow smoothness term.
    pub lambda_tv: f64,
    /// Weight of the blur re-synthesis term.
    pub lambda_blur: f64,
    /// Weight of the rolling-shutter re-synthesis term.
    pub lambda_rs: f64,
    /// Smoothing floor of the robust penalty, shared by data and TV terms.
    pub charbonnier_eps: f64,
    /// Normalized exposure time the blur view is anchored to.
    #[serde(rename = "t_anchor_B")]
    pub t_anchor_b: f64,
    /// Carried alongside the run for reproducible experiment pipelines; the
    /// optimizer itself is deterministic and draws nothing from it.
    pub seed: u64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            n_levels: 3,
            iters_per_level: 60,
            step_size: 1.0,
            lambda_tv: 0.05,
            lambda_blur: 1.0,
            lambda_rs: 1.0,
            charbonnier_eps: 1e-2,
            t_anchor_b: 0.5,
            seed: 0,
        }
    }
}

impl DecomposeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 1 {
            return Err(Error::invalid("decompose config", "n_levels must be >= 1"));
        }
        if self.iters_per_level < 1 {
            return Err(Error::invalid("decompose config", "iters_per_level must be >= 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("decompose config", "step_size must be positive"));
        }
        for (name, v) in [
            ("lambda_tv", self.lambda_tv),
            ("lambda_blur", self.lambda_blur),
            ("lambda_rs", self.lambda_rs),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    "decompose config",
                    format!("{name} must be finite and non-negative, got {v}"),
                ));
            }
        }
        if !(self.charbonnier_eps.is_finite() && self.charbonnier_eps > 0.0) {
            return Err(Error::invalid("decompose config", "charbonnier_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.t_anchor_b) {
            return Err(Error::invalid(
                "decompose config",
                format!("t_anchor_B must lie in [0,1], got {}", self.t_anchor_b),
            ));
        }
        Ok(())
    }
}

/// Optimizer state: the base flow, the fusion logits, the pyramid level the
/// state lives on (0 = full resolution), and the accepted-energy trace as
/// `(iteration, level, energy)` rows.
#[derive(Debug, Clone)]
pub struct DecomposeState {
    pub base_flow: FlowField,
    pub mask_logits: Grid,
    pub level: usize,
    pub energy_trace: Vec<TraceEntry>,
}

impl DecomposeState {
    pub fn new(h: usize, w: usize) -> DecomposeState {
        DecomposeState {
            base_flow: FlowField::zeros(h, w),
            mask_logits: Grid::zeros(h, w),
            level: 0,
            energy_trace: Vec::new(),
        }
    }

    /// Fusion weights implied by the logits.
    pub fn mask(&self) -> FusionMask {
        FusionMask::new(self.mask_logits.map(sigmoid)).expect("sigmoid output lies in [0,1]")
    }
}

/// Gradient of the energy with respect to the optimization variables.
#[derive(Debug, Clone)]
pub struct EnergyGradient {
    pub du: Grid,
    pub dv: Grid,
    pub dlogits: Grid,
}

impl EnergyGradient {
    pub fn norm_sq(&self) -> f64 {
        self.du
            .data()
            .iter()
            .chain(self.dv.data())
            .chain(self.dlogits.data())
            .map(|g| g * g)
            .sum()
    }

    /// Largest absolute component across all three planes.
    pub fn norm_inf(&self) -> f64 {
        self.du
            .data()
            .iter()
            .chain(self.dv.data())
            .chain(self.dlogits.data())
            .fold(0.0f64, |m, &g| m.max(g.abs()))
    }
}

/// Result of a full decomposition run.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub sequence: LatentSequence,
    pub state: DecomposeState,
    pub warning: Option<String>,
}

/// Recovered motion direction of the dominant horizontal component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionSign {
    Positive,
    Negative,
    None,
}

/// Outcome of solving from mirrored initial flows to separate the two
/// motion-direction basins.
#[derive(Debug)]
pub struct DisambiguationReport {
    pub energy_pos: f64,
    pub energy_neg: f64,
    /// `energy_neg - energy_pos`; positive favors the positive-u basin.
    pub energy_gap: f64,
    pub mean_u_pos: f64,
    pub mean_u_neg: f64,
    pub winner: MotionSign,
    /// Decomposition from the winning basin (positive-init run on a tie).
    pub decomposition: Decomposition,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sampling scale that warps the blur view toward instant fraction `t_frac`.
#[inline]
fn blur_scale(anchor: f64, t_frac: f64) -> f64 {
    anchor - t_frac
}

/// Sampling scale that warps the rolling-shutter view (read at `tau_row`)
/// toward instant fraction `t_frac`.
#[inline]
fn rs_scale(tau_row: f64, t_frac: f64) -> f64 {
    tau_row - t_frac
}

/// Readout fraction of every row for an `h`-row frame with `n` instants.
fn row_times(h: usize, n: usize) -> Vec<f64> {
    (0..h)
        .map(|k| latent_for_row(h, n, k) as f64 / (n as f64 - 1.0))
        .collect()
}

fn check_state_shapes(pair_shape: (usize, usize), state: &DecomposeState) -> Result<()> {
    if state.base_flow.shape() != pair_shape {
        return Err(Error::ShapeMismatch {
            what: "decompose state flow",
            expected: pair_shape,
            got: state.base_flow.shape(),
        });
    }
    if state.mask_logits.shape() != pair_shape {
        return Err(Error::ShapeMismatch {
            what: "decompose state logits",
            expected: pair_shape,
            got: state.mask_logits.shape(),
        });
    }
    Ok(())
}

/// One latent frame reconstructed from the pair under the current state:
/// both views are warped toward instant `t` and blended by the mask.
#[allow(clippy::needless_range_loop)]
pub fn reconstruct_frame(
    pair: &ObservationPair,
    state: &DecomposeState,
    cfg: &DecomposeConfig,
    t: usize,
) -> Result<Image> {
    cfg.validate()?;
    let (h, w, c) = pair.blur.shape();
    check_state_shapes((h, w), state)?;
    state.base_flow.check_finite()?;
    let n = pair.timing.n_latent;
    if t >= n {
        return Err(Error::OutOfBounds { what: "latent instant", index: t, len: n });
    }
    let tau = row_times(h, n);
    let t_frac = t as f64 / (n as f64 - 1.0);
    let sb = blur_scale(cfg.t_anchor_b, t_frac);
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        let sr = rs_scale(tau[y], t_frac);
        for x in 0..w {
            let u = state.base_flow.u.at(y, x);
            let v = state.base_flow.v.at(y, x);
            let m = sigmoid(state.mask_logits.at(y, x));
            for ch in 0..c {
                let wb = sample_bilinear(&pair.blur, y as f64 + sb * v, x as f64 + sb * u, ch);
                let wr = sample_bilinear(&pair.rs, y as f64 + sr * v, x as f64 + sr * u, ch);
                *out.at_mut(y, x, ch) = m * wb + (1.0 - m) * wr;
            }
        }
    }
    Ok(out)
}

/// Energy terms before weighting: blur re-synthesis, rolling-shutter
/// re-synthesis, and total variation.
struct EnergyTerms {
    blur: f64,
    rs: f64,
    tv: f64,
}

impl EnergyTerms {
    fn total(&self, cfg: &DecomposeConfig) -> f64 {
        cfg.lambda_blur * self.blur + cfg.lambda_rs * self.rs + cfg.lambda_tv * self.tv
    }
}

/// Data-term evaluation shared by `energy` and `energy_gradient`.
///
/// Walks every pixel once, reconstructing all `n` latent samples in place.
/// The blur residual uses the shifted mean `S^0 + mean(S^t - S^0)` so a
/// static stack yields an exactly zero residual; its derivative is the plain
/// `1/n` either way.
#[allow(clippy::needless_range_loop)]
fn evaluate(
    b: &Image,
    r: &Image,
    n: usize,
    flow: &FlowField,
    logits: &Grid,
    cfg: &DecomposeConfig,
    want_grad: bool,
) -> (EnergyTerms, Option<EnergyGradient>) {
    let (h, w, c) = b.shape();
    let eps2 = cfg.charbonnier_eps * cfg.charbonnier_eps;
    let n_f = n as f64;
    let tau = row_times(h, n);
    let t_frac: Vec<f64> = (0..n).map(|t| t as f64 / (n_f - 1.0)).collect();
    let sb: Vec<f64> = t_frac.iter().map(|&f| blur_scale(cfg.t_anchor_b, f)).collect();

    let mut grad = want_grad.then(|| EnergyGradient {
        du: Grid::zeros(h, w),
        dv: Grid::zeros(h, w),
        dlogits: Grid::zeros(h, w),
    });

    // Per-instant scratch, reused across pixels.
    let mut s_val = vec![0.0; n * c];
    let mut wb_val = vec![0.0; n * c];
    let mut wr_val = vec![0.0; n * c];
    let mut wb_dx = vec![0.0; n * c];
    let mut wb_dy = vec![0.0; n * c];
    let mut wr_dx = vec![0.0; n * c];
    let mut wr_dy = vec![0.0; n * c];

    let mut e_blur = 0.0;
    let mut e_rs = 0.0;

    for y in 0..h {
        let t_own = latent_for_row(h, n, y);
        for x in 0..w {
            let u = flow.u.at(y, x);
            let v = flow.v.at(y, x);
            let m = sigmoid(logits.at(y, x));

            for t in 0..n {
                let sbt = sb[t];
                let srt = rs_scale(tau[y], t_frac[t]);
                let (bx, by) = (x as f64 + sbt * u, y as f64 + sbt * v);
                let (rx, ry) = (x as f64 + srt * u, y as f64 + srt * v);
                for ch in 0..c {
                    let i = t * c + ch;
                    if want_grad {
                        let (vb, gby, gbx) = sample_bilinear_grad(b, by, bx, ch);
                        let (vr, gry, grx) = sample_bilinear_grad(r, ry, rx, ch);
                        wb_val[i] = vb;
                        wr_val[i] = vr;
                        wb_dx[i] = gbx;
                        wb_dy[i] = gby;
                        wr_dx[i] = grx;
                        wr_dy[i] = gry;
                        s_val[i] = m * vb + (1.0 - m) * vr;
                    } else {
                        let vb = sample_bilinear(b, by, bx, ch);
                        let vr = sample_bilinear(r, ry, rx, ch);
                        s_val[i] = m * vb + (1.0 - m) * vr;
                    }
                }
            }

            // Residuals of both data terms at this pixel.
            let mut coef = vec![0.0; c]; // d(energy)/d(S^t_c) shared blur part
            let mut coef_own = vec![0.0; c]; // extra weight on the owning instant
            for ch in 0..c {
                let s0 = s_val[ch];
                let mut acc = 0.0;
                for t in 1..n {
                    acc += s_val[t * c + ch] - s0;
                }
                let blur_hat = s0 + acc / n_f;
                let rb = blur_hat - b.at(y, x, ch);
                let rho_b = (rb * rb + eps2).sqrt();
                e_blur += rho_b;
                let rr = s_val[t_own * c + ch] - r.at(y, x, ch);
                let rho_r = (rr * rr + eps2).sqrt();
                e_rs += rho_r;
                if want_grad {
                    coef[ch] = cfg.lambda_blur * (rb / rho_b) / n_f;
                    coef_own[ch] = cfg.lambda_rs * (rr / rho_r);
                }
            }

            if let Some(g) = grad.as_mut() {
                let dm = m * (1.0 - m);
                let (mut gu, mut gv, mut gl) = (0.0, 0.0, 0.0);
                for t in 0..n {
                    let sbt = sb[t];
                    let srt = rs_scale(tau[y], t_frac[t]);
                    for ch in 0..c {
                        let i = t * c + ch;
                        let mut wgt = coef[ch];
                        if t == t_own {
                            wgt += coef_own[ch];
                        }
                        gu += wgt * (m * sbt * wb_dx[i] + (1.0 - m) * srt * wr_dx[i]);
                        gv += wgt * (m * sbt * wb_dy[i] + (1.0 - m) * srt * wr_dy[i]);
                        gl += wgt * dm * (wb_val[i] - wr_val[i]);
                    }
                }
                *g.du.at_mut(y, x) = gu;
                *g.dv.at_mut(y, x) = gv;
                *g.dlogits.at_mut(y, x) = gl;
            }
        }
    }

    // Smoothness of the base flow: joint Charbonnier of forward differences.
    let mut e_tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            let dux = if x + 1 < w { flow.u.at(y, x + 1) - flow.u.at(y, x) } else { 0.0 };
            let duy = if y + 1 < h { flow.u.at(y + 1, x) - flow.u.at(y, x) } else { 0.0 };
            let dvx = if x + 1 < w { flow.v.at(y, x + 1) - flow.v.at(y, x) } else { 0.0 };
            let dvy = if y + 1 < h { flow.v.at(y + 1, x) - flow.v.at(y, x) } else { 0.0 };
            let phi = (dux * dux + duy * duy + dvx * dvx + dvy * dvy + eps2).sqrt();
            e_tv += phi;
            if let Some(g) = grad.as_mut() {
                let s = cfg.lambda_tv / phi;
                if x + 1 < w {
                    *g.du.at_mut(y, x) -= s * dux;
                    *g.du.at_mut(y, x + 1) += s * dux;
                    *g.dv.at_mut(y, x) -= s * dvx;
                    *g.dv.at_mut(y, x + 1) += s * dvx;
                }
                if y + 1 < h {
                    *g.du.at_mut(y, x) -= s * duy;
                    *g.du.at_mut(y + 1, x) += s * duy;
                    *g.dv.at_mut(y, x) -= s * dvy;
                    *g.dv.at_mut(y + 1, x) += s * dvy;
                }
            }
        }
    }

    (EnergyTerms { blur: e_blur, rs: e_rs, tv: e_tv }, grad)
}

/// Weighted energy of a state against an observation pair.
pub fn energy(pair: &ObservationPair, state: &DecomposeState, cfg: &DecomposeConfig) -> Result<f64> {
    cfg.validate()?;
    let (h, w, _) = pair.blur.shape();
    check_state_shapes((h, w), state)?;
    state.base_flow.check_finite()?;
    let (terms, _) = evaluate(
        &pair.blur,
        &pair.rs,
        pair.timing.n_latent,
        &state.base_flow,
        &state.mask_logits,
        cfg,
        false,
    );
    Ok(terms.total(cfg))
}

/// Energy together with its analytic gradient with respect to the base flow
/// and the fusion logits.
pub fn energy_gradient(
    pair: &ObservationPair,
    state: &DecomposeState,
    cfg: &DecomposeConfig,
) -> Result<(f64, EnergyGradient)> {
    cfg.validate()?;
    let (h, w, _) = pair.blur.shape();
    check_state_shapes((h, w), state)?;
    state.base_flow.check_finite()?;
    let (terms, grad) = evaluate(
        &pair.blur,
        &pair.rs,
        pair.timing.n_latent,
        &state.base_flow,
        &state.mask_logits,
        cfg,
        true,
    );
    Ok((terms.total(cfg), grad.expect("gradient requested")))
}

/// Full coarse-to-fine solve starting from zero flow and neutral logits.
pub fn decompose(pair: &ObservationPair, cfg: &DecomposeConfig) -> Result<Decomposition> {
    decompose_with_uniform_init(pair, cfg, (0.0, 0.0))
}

/// Solve with the base flow initialized to a constant full-resolution
/// displacement. Used by [`disambiguation_report`] to probe both motion
/// basins; `decompose` is the zero-init special case.
pub fn decompose_with_uniform_init(
    pair: &ObservationPair,
    cfg: &DecomposeConfig,
    init_uv: (f64, f64),
) -> Result<Decomposition> {
    cfg.validate()?;
    pair.timing.validate()?;
    let n = pair.timing.n_latent;
    let (h, w, _c) = pair.blur.shape();

    if n == 1 {
        // Unreachable through validated configs; kept as a defensive guard
        // for hand-built ones.
        let state = DecomposeState::new(h, w);
        let sequence = LatentSequence::from_parts_unchecked(vec![pair.blur.clone()], pair.timing.clone());
        return Ok(Decomposition {
            sequence,
            state,
            warning: Some("single latent instant: returning the blur view unchanged".into()),
        });
    }

    // Pyramid no deeper than the geometry allows.
    let mut n_levels = 1usize;
    while n_levels < cfg.n_levels {
        let shapes = level_shapes(h, w, n_levels + 1);
        let (lh, lw) = shapes[n_levels];
        if lh.min(lw) < MIN_LEVEL_EXTENT {
            break;
        }
        n_levels += 1;
    }
    let shapes = level_shapes(h, w, n_levels);

    let mut blurs = vec![pair.blur.clone()];
    let mut rss = vec![pair.rs.clone()];
    for _ in 1..n_levels {
        blurs.push(downsample_half(blurs.last().expect("non-empty")));
        rss.push(downsample_half(rss.last().expect("non-empty")));
    }

    let coarse_scale = (1 << (n_levels - 1)) as f64;
    let (ch0, cw0) = shapes[n_levels - 1];
    let mut flow = FlowField::constant(ch0, cw0, init_uv.0 / coarse_scale, init_uv.1 / coarse_scale);
    let mut logits = Grid::zeros(ch0, cw0);

    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut iter = 0usize;

    for lv in (0..n_levels).rev() {
        let b = &blurs[lv];
        let r = &rss[lv];
        let hw = (shapes[lv].0 * shapes[lv].1) as f64;
        // Fresh step lengths per level; a level that converged to the line
        // search floor must not freeze the next one.
        let mut alpha_pix = cfg.step_size;
        let mut alpha_uni = (8.0 * cfg.step_size).min(MAX_STEP);
        let mut uniform_alive = true;

        let (terms, _) = evaluate(b, r, n, &flow, &logits, cfg, false);
        let mut e = terms.total(cfg);
        if !e.is_finite() {
            return Err(Error::SolverDiverged { trace });
        }
        trace.push((iter, lv, e));

        let mut moves = 0usize;
        while moves < cfg.iters_per_level {
            let (terms, grad) = evaluate(b, r, n, &flow, &logits, cfg, true);
            let e0 = terms.total(cfg);
            if !e0.is_finite() {
                return Err(Error::SolverDiverged { trace });
            }
            let g = grad.expect("gradient requested");
            let mut stepped = false;

            // Global-translation step first: the gradient projected onto
            // constant planes follows the smooth part of the landscape and
            // covers large displacements in a few accepted steps, which the
            // per-pixel direction cannot (its mean drift is buried under
            // pixel-scale components).
            if uniform_alive {
                let mu = g.du.mean();
                let mv = g.dv.mean();
                let ml = g.dlogits.mean();
                let s = mu.abs().max(mv.abs()).max(ml.abs());
                if s > 0.0 && s.is_finite() {
                    let slope = hw * (mu * mu + mv * mv + ml * ml) / s;
                    while alpha_uni >= MIN_STEP {
                        let k = alpha_uni / s;
                        let cand_flow = FlowField {
                            u: flow.u.map(|x| x - k * mu),
                            v: flow.v.map(|x| x - k * mv),
                        };
                        let cand_l = logits.map(|x| x - k * ml);
                        let (t_try, _) = evaluate(b, r, n, &cand_flow, &cand_l, cfg, false);
                        let e_try = t_try.total(cfg);
                        if e_try.is_finite() && e_try <= e0 - ARMIJO_C * alpha_uni * slope {
                            flow = cand_flow;
                            logits = cand_l;
                            e = e_try;
                            stepped = true;
                            alpha_uni = (alpha_uni * 2.0).min(MAX_STEP);
                            break;
                        }
                        alpha_uni *= 0.5;
                    }
                }
                if !stepped {
                    uniform_alive = false;
                }
            }

            // Per-pixel step along -g / |g|_inf, so `alpha_pix` reads as the
            // largest change of any variable this iteration. The directional
            // derivative along that direction is -|g|^2 / |g|_inf.
            if !stepped {
                let g2 = g.norm_sq();
                let ginf = g.norm_inf();
                if ginf == 0.0 || !ginf.is_finite() {
                    break;
                }
                let slope = g2 / ginf;
                while alpha_pix >= MIN_STEP {
                    let scale = alpha_pix / ginf;
                    let cand_flow = FlowField {
                        u: step_grid(&flow.u, &g.du, scale),
                        v: step_grid(&flow.v, &g.dv, scale),
                    };
                    let cand_l = step_grid(&logits, &g.dlogits, scale);
                    let (t_try, _) = evaluate(b, r, n, &cand_flow, &cand_l, cfg, false);
                    let e_try = t_try.total(cfg);
                    if e_try.is_finite() && e_try <= e0 - ARMIJO_C * alpha_pix * slope {
                        flow = cand_flow;
                        logits = cand_l;
                        e = e_try;
                        stepped = true;
                        alpha_pix = (alpha_pix * 2.0).min(MAX_STEP);
                        break;
                    }
                    alpha_pix *= 0.5;
                }
            }

            if !stepped {
                break;
            }
            moves += 1;
            iter += 1;
            trace.push((iter, lv, e));
        }

        if lv > 0 {
            let (nh, nw) = shapes[lv - 1];
            flow = FlowField {
                u: upsample_bilinear_grid(&flow.u, nh, nw).map(|d| d * 2.0),
                v: upsample_bilinear_grid(&flow.v, nh, nw).map(|d| d * 2.0),
            };
            logits = upsample_bilinear_grid(&logits, nh, nw);
        }
    }

    let state = DecomposeState {
        base_flow: flow,
        mask_logits: logits,
        level: 0,
        energy_trace: trace,
    };

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let frame = reconstruct_frame(pair, &state, cfg, t)?;
        frames.push(frame.map(|v| v.clamp(0.0, 1.0)));
    }
    let sequence = LatentSequence::new(frames, pair.timing.clone())?;
    Ok(Decomposition { sequence, state, warning: None })
}

fn step_grid(x: &Grid, g: &Grid, alpha: f64) -> Grid {
    let (h, w) = x.shape();
    let mut out = x.clone();
    for (o, &d) in out.data_mut().iter_mut().zip(g.data()) {
        *o -= alpha * d;
    }
    debug_assert_eq!(out.shape(), (h, w));
    out
}

/// Probe amplitude (full-resolution pixels) of the mirrored initializations.
pub const DISAMBIGUATION_PROBE_PX: f64 = 0.5;

/// Runs the solver from mirrored uniform flow initializations and reports
/// which basin wins by final energy, the gap, and each basin's mean
/// horizontal flow. A gap under `1e-4` counts as a tie with no direction.
pub fn disambiguation_report(
    pair: &ObservationPair,
    cfg: &DecomposeConfig,
) -> Result<DisambiguationReport> {
    let pos = decompose_with_uniform_init(pair, cfg, (DISAMBIGUATION_PROBE_PX, 0.0))?;
    let neg = decompose_with_uniform_init(pair, cfg, (-DISAMBIGUATION_PROBE_PX, 0.0))?;
    let energy_pos = final_energy(&pos)?;
    let energy_neg = final_energy(&neg)?;
    let gap = energy_neg - energy_pos;
    let mean_u_pos = pos.state.base_flow.u.mean();
    let mean_u_neg = neg.state.base_flow.u.mean();

    // Separated basins: the lower final energy names the winner. Merged
    // basins (both probes pulled to the same optimum, energies tied): the
    // direction is whatever both runs agree on; a genuine zero-motion pair
    // leaves both means inside the deadband and reports no direction.
    let (winner, decomposition) = if gap.abs() >= TIE_GAP {
        if energy_pos <= energy_neg {
            (sign_of(mean_u_pos), pos)
        } else {
            (sign_of(mean_u_neg), neg)
        }
    } else {
        let sp = sign_of(mean_u_pos);
        let sn = sign_of(mean_u_neg);
        (if sp == sn { sp } else { MotionSign::None }, pos)
    };
    Ok(DisambiguationReport {
        energy_pos,
        energy_neg,
        energy_gap: gap,
        mean_u_pos,
        mean_u_neg,
        winner,
        decomposition,
    })
}

fn sign_of(mean_u: f64) -> MotionSign {
    if mean_u > SIGN_DEADBAND {
        MotionSign::Positive
    } else if mean_u < -SIGN_DEADBAND {
        MotionSign::Negative
    } else {
        MotionSign::None
    }
}

fn final_energy(d: &Decomposition) -> Result<f64> {
    d.state
        .energy_trace
        .last()
        .map(|&(_, _, e)| e)
        .ok_or_else(|| Error::invalid("decomposition", "empty energy trace"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{synthesize_pair, LatentSequence};
    use crate::timing::TimingConfig;

    /// Smooth band-limited texture with structure in both axes.
    fn texture(h: usize, w: usize, seed: u64) -> Image {
        let s = seed as f64;
        Image::from_fn(h, w, 1, |y, x, _| {
            let (yf, xf) = (y as f64, x as f64);
            0.5 + 0.16 * ((0.11 + 0.013 * s) * xf + 0.07 * yf + s).sin()
                + 0.14 * (0.06 * xf - (0.09 + 0.011 * s) * yf + 2.0 * s).cos()
                + 0.10 * (0.21 * xf + 0.17 * yf - s).sin()
        })
    }

    /// Latent stack translating the analytic texture by `v` px/frame.
    fn moving_scene(h: usize, w: usize, n: usize, v: f64, seed: u64) -> LatentSequence {
        let s = seed as f64;
        let frames: Vec<_> = (0..n)
            .map(|t| {
                let shift = v * t as f64;
                Image::from_fn(h, w, 1, |y, x, _| {
                    let (yf, xf) = (y as f64, x as f64 - shift);
                    0.5 + 0.16 * ((0.11 + 0.013 * s) * xf + 0.07 * yf + s).sin()
                        + 0.14 * (0.06 * xf - (0.09 + 0.011 * s) * yf + 2.0 * s).cos()
                        + 0.10 * (0.21 * xf + 0.17 * yf - s).sin()
                })
            })
            .collect();
        LatentSequence::new(frames, TimingConfig::synthetic(h, w, n)).unwrap()
    }

    fn static_pair(h: usize, w: usize, n: usize) -> ObservationPair {
        let frame = texture(h, w, 3);
        let seq = LatentSequence::new(vec![frame; n], TimingConfig::synthetic(h, w, n)).unwrap();
        synthesize_pair(&seq).unwrap()
    }

    #[test]
    fn static_pair_at_rest_sits_at_the_charbonnier_floor() {
        let (h, w, n) = (16, 16, 5);
        let pair = static_pair(h, w, n);
        let state = DecomposeState::new(h, w);
        let mut cfg = DecomposeConfig { lambda_tv: 0.0, ..DecomposeConfig::default() };

        // M == 1 exactly at logits far in the saturated regime.
        let mut m1 = state.clone();
        m1.mask_logits = Grid::filled(h, w, 40.0);
        let e = energy(&pair, &m1, &cfg).unwrap();
        let floor = 2.0 * (h * w) as f64 * cfg.charbonnier_eps;
        assert!(
            (e - floor).abs() < 1e-9 * floor,
            "data energy {e} should equal the floor {floor}"
        );

        // Residual-free energies scale linearly in eps.
        cfg.charbonnier_eps *= 2.0;
        let e2 = energy(&pair, &m1, &cfg).unwrap();
        assert!((e2 - 2.0 * e).abs() < 1e-9 * e, "doubling eps must double a floor-only energy");
    }

    #[test]
    fn doubling_lambda_tv_doubles_the_smoothness_share() {
        let (h, w, n) = (12, 12, 3);
        let pair = static_pair(h, w, n);
        let mut state = DecomposeState::new(h, w);
        state.base_flow = FlowField {
            u: Grid::from_fn(h, w, |y, x| 0.3 * (y as f64 * 0.4).sin() + 0.1 * x as f64 / w as f64),
            v: Grid::from_fn(h, w, |y, x| 0.2 * (x as f64 * 0.3).cos() - 0.05 * y as f64 / h as f64),
        };
        let mk = |tv: f64| DecomposeConfig { lambda_tv: tv, ..DecomposeConfig::default() };
        let e0 = energy(&pair, &state, &mk(0.0)).unwrap();
        let e1 = energy(&pair, &state, &mk(0.08)).unwrap();
        let e2 = energy(&pair, &state, &mk(0.16)).unwrap();
        let once = e1 - e0;
        let twice = e2 - e0;
        assert!(once > 0.0);
        assert!((twice - 2.0 * once).abs() < 1e-9 * once.abs());
    }

    #[test]
    fn gradient_vanishes_at_the_symmetric_stationary_point() {
        let (h, w, n) = (16, 16, 5);
        let pair = static_pair(h, w, n);
        let state = DecomposeState::new(h, w);
        let cfg = DecomposeConfig::default();
        let (_, g) = energy_gradient(&pair, &state, &cfg).unwrap();
        let norm = g.norm_sq().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm} at a symmetric minimum");
    }

    #[test]
    fn tv_gradient_of_constant_flow_is_zero() {
        let (h, w, n) = (10, 10, 3);
        let pair = static_pair(h, w, n);
        let mut state = DecomposeState::new(h, w);
        state.base_flow = FlowField::constant(h, w, 1.7, -2.3);
        let cfg = DecomposeConfig {
            lambda_blur: 0.0,
            lambda_rs: 0.0,
            lambda_tv: 1.0,
            ..DecomposeConfig::default()
        };
        let (_, g) = energy_gradient(&pair, &state, &cfg).unwrap();
        assert!(g.du.data().iter().all(|&v| v == 0.0));
        assert!(g.dv.data().iter().all(|&v| v == 0.0));
    }

    /// Five-point central difference of the energy along one coordinate.
    fn fd_coord(
        pair: &ObservationPair,
        state: &DecomposeState,
        cfg: &DecomposeConfig,
        which: usize,
        y: usize,
        x: usize,
    ) -> f64 {
        let h = 1e-5;
        let probe = |delta: f64| {
            let mut s = state.clone();
            let grid = match which {
                0 => &mut s.base_flow.u,
                1 => &mut s.base_flow.v,
                _ => &mut s.mask_logits,
            };
            *grid.at_mut(y, x) += delta;
            energy(pair, &s, cfg).unwrap()
        };
        (probe(-2.0 * h) - 8.0 * probe(-h) + 8.0 * probe(h) - probe(2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_on_a_random_instance() {
        let (h, w, n) = (12, 12, 5);
        let seq = moving_scene(h, w, n, 0.8, 5);
        let pair = synthesize_pair(&seq).unwrap();
        let mut state = DecomposeState::new(h, w);
        // Fractional offsets keep every sample away from the bilinear lattice.
        state.base_flow = FlowField {
            u: Grid::from_fn(h, w, |y, x| 0.63 + 0.31 * ((y * 7 + x * 3) % 5) as f64 / 5.0),
            v: Grid::from_fn(h, w, |y, x| -0.41 + 0.27 * ((y * 3 + x * 11) % 7) as f64 / 7.0),
        };
        state.mask_logits = Grid::from_fn(h, w, |y, x| 0.4 * ((y + 2 * x) % 3) as f64 - 0.3);
        let cfg = DecomposeConfig::default();
        let (_, g) = energy_gradient(&pair, &state, &cfg).unwrap();
        for &(which, y, x) in &[
            (0usize, 2usize, 3usize),
            (0, 7, 10),
            (1, 4, 4),
            (1, 10, 1),
            (2, 5, 8),
            (2, 11, 11),
            (0, 0, 0),
            (1, 11, 0),
        ] {
            let analytic = match which {
                0 => g.du.at(y, x),
                1 => g.dv.at(y, x),
                _ => g.dlogits.at(y, x),
            };
            let fd = fd_coord(&pair, &state, &cfg, which, y, x);
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-4);
            assert!(rel < 1e-4, "coord ({which},{y},{x}): analytic {analytic} vs fd {fd} rel {rel}");
        }
    }

    #[test]
    fn ground_truth_state_reconstructs_the_latent_frames() {
        let (h, w, n, v) = (48, 48, 9, 1.5);
        let seq = moving_scene(h, w, n, v, 7);
        let pair = synthesize_pair(&seq).unwrap();
        let mut state = DecomposeState::new(h, w);
        // Scene displacement over the exposure; rolling-shutter side carries
        // the sharp content, so the mask selects it outright.
        state.base_flow = FlowField::constant(h, w, v * (n as f64 - 1.0), 0.0);
        state.mask_logits = Grid::filled(h, w, -40.0);
        let cfg = DecomposeConfig::default();
        let margin = 16;
        for t in 0..n {
            let rec = reconstruct_frame(&pair, &state, &cfg, t).unwrap();
            let gt = &seq.frames()[t];
            let mut max_err = 0.0f64;
            for y in margin..h - margin {
                for x in margin..w - margin {
                    max_err = max_err.max((rec.at(y, x, 0) - gt.at(y, x, 0)).abs());
                }
            }
            assert!(max_err < 0.01, "instant {t}: interior error {max_err} beyond bilinear tolerance");
        }
    }

    #[test]
    fn reconstruct_validates_instant_and_shapes() {
        let pair = static_pair(8, 8, 3);
        let state = DecomposeState::new(8, 8);
        let cfg = DecomposeConfig::default();
        assert!(reconstruct_frame(&pair, &state, &cfg, 3).is_err());
        let wrong = DecomposeState::new(9, 8);
        assert!(reconstruct_frame(&pair, &wrong, &cfg, 0).is_err());
        assert!(energy(&pair, &wrong, &cfg).is_err());
    }

    #[test]
    fn decompose_of_a_static_pair_returns_the_shared_frame() {
        let (h, w, n) = (64, 64, 5);
        let pair = static_pair(h, w, n);
        let cfg = DecomposeConfig { iters_per_level: 10, ..DecomposeConfig::default() };
        let out = decompose(&pair, &cfg).unwrap();
        assert!(out.warning.is_none());
        for (t, frame) in out.sequence.frames().iter().enumerate() {
            let mse: f64 = frame
                .data()
                .iter()
                .zip(pair.blur.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / frame.data().len() as f64;
            let psnr = -10.0 * mse.max(1e-12).log10();
            assert!(psnr >= 50.0, "instant {t}: PSNR {psnr} dB against the blur view");
        }
    }

    #[test]
    fn energy_trace_is_monotone_within_each_level() {
        let (h, w, n) = (48, 48, 5);
        let seq = moving_scene(h, w, n, 1.0, 9);
        let pair = synthesize_pair(&seq).unwrap();
        let cfg = DecomposeConfig { iters_per_level: 12, ..DecomposeConfig::default() };
        let out = decompose(&pair, &cfg).unwrap();
        let trace = &out.state.energy_trace;
        assert!(!trace.is_empty());
        for pair_w in trace.windows(2) {
            let (i0, l0, e0) = pair_w[0];
            let (i1, l1, e1) = pair_w[1];
            assert!(i1 >= i0);
            if l0 == l1 {
                assert!(e1 <= e0, "energy rose from {e0} to {e1} within level {l0}");
            }
        }
    }

    #[test]
    fn decompose_is_deterministic() {
        let (h, w, n) = (32, 32, 5);
        let seq = moving_scene(h, w, n, 1.2, 4);
        let pair = synthesize_pair(&seq).unwrap();
        let cfg = DecomposeConfig { iters_per_level: 8, ..DecomposeConfig::default() };
        let a = decompose(&pair, &cfg).unwrap();
        let b = decompose(&pair, &cfg).unwrap();
        assert_eq!(a.state.base_flow, b.state.base_flow);
        assert_eq!(a.state.mask_logits, b.state.mask_logits);
        assert_eq!(a.state.energy_trace, b.state.energy_trace);
        assert_eq!(a.sequence.frames(), b.sequence.frames());
    }

    #[test]
    fn rightward_motion_recovers_positive_flow() {
        let (h, w, n) = (64, 64, 9);
        let seq = moving_scene(h, w, n, 2.0, 11);
        let pair = synthesize_pair(&seq).unwrap();
        let cfg = DecomposeConfig::default();
        let out = decompose(&pair, &cfg).unwrap();
        let mean_u = out.state.base_flow.u.mean();
        assert!(mean_u > 1.0, "mean recovered u {mean_u} for +2 px/frame motion");
    }

    #[test]
    fn blur_only_energy_cannot_tell_mirrored_motion_apart() {
        // Horizontally symmetric texture, observations of rightward motion,
        // and a state that reads only the blur view (mask saturated at 1).
        let (h, w, n) = (48, 48, 9);
        let center = (w as f64 - 1.0) / 2.0;
        let frames: Vec<_> = (0..n)
            .map(|t| {
                let shift = 1.5 * t as f64;
                Image::from_fn(h, w, 1, |y, x, _| {
                    let xf = x as f64 - center - shift;
                    let yf = y as f64;
                    0.5 + 0.2 * (0.19 * xf).cos() * (0.9 + 0.1 * (0.23 * yf).sin())
                        + 0.12 * (0.07 * xf).cos()
                })
            })
            .collect();
        let seq = LatentSequence::new(frames, TimingConfig::synthetic(h, w, n)).unwrap();
        let pair = synthesize_pair(&seq).unwrap();
        let cfg = DecomposeConfig { lambda_rs: 0.0, ..DecomposeConfig::default() };
        let base = 1.5 * (n as f64 - 1.0);
        let mut fwd = DecomposeState::new(h, w);
        fwd.base_flow = FlowField::constant(h, w, base, 0.0);
        fwd.mask_logits = Grid::filled(h, w, 40.0);
        let mut rev = fwd.clone();
        rev.base_flow = FlowField::constant(h, w, -base, 0.0);
        let e_fwd = energy(&pair, &fwd, &cfg).unwrap();
        let e_rev = energy(&pair, &rev, &cfg).unwrap();
        assert!(
            (e_fwd - e_rev).abs() < 1e-5,
            "blur-only energies must coincide: {e_fwd} vs {e_rev}"
        );
    }

    #[test]
    fn rolling_shutter_term_separates_mirrored_motion() {
        let (h, w, n) = (48, 48, 9);
        let seq = moving_scene(h, w, n, 2.0, 13);
        let pair = synthesize_pair(&seq).unwrap();
        let cfg = DecomposeConfig::default();
        let base = 2.0 * (n as f64 - 1.0);
        let mut fwd = DecomposeState::new(h, w);
        fwd.base_flow = FlowField::constant(h, w, base, 0.0);
        let mut rev = fwd.clone();
        rev.base_flow = FlowField::constant(h, w, -base, 0.0);
        let e_fwd = energy(&pair, &fwd, &cfg).unwrap();
        let e_rev = energy(&pair, &rev, &cfg).unwrap();
        assert!(
            e_fwd + 1e-3 < e_rev,
            "true direction must win with the rolling-shutter term: {e_fwd} vs {e_rev}"
        );
    }

    #[test]
    fn disambiguation_on_static_pair_reports_no_direction() {
        let pair = static_pair(48, 48, 5);
        let cfg = DecomposeConfig { iters_per_level: 10, ..DecomposeConfig::default() };
        let report = disambiguation_report(&pair, &cfg).unwrap();
        assert!(report.energy_gap.abs() < 1e-4, "gap {}", report.energy_gap);
        assert_eq!(report.winner, MotionSign::None);
    }

    #[test]
    fn disambiguation_finds_rightward_motion() {
        let (h, w, n) = (64, 64, 9);
        let seq = moving_scene(h, w, n, 2.0, 17);
        let pair = synthesize_pair(&seq).unwrap();
        let cfg = DecomposeConfig::default();
        let report = disambiguation_report(&pair, &cfg).unwrap();
        assert_eq!(report.winner, MotionSign::Positive, "gap {}", report.energy_gap);
        assert!(report.mean_u_pos > 0.0);
    }

    #[test]
    fn runaway_weights_surface_as_divergence() {
        // A moving pair has O(1) residuals, so an astronomically large data
        // weight overflows the energy to infinity on the first evaluation.
        let seq = moving_scene(16, 16, 3, 2.0, 21);
        let pair = synthesize_pair(&seq).unwrap();
        let huge = f64::MAX / 2.0;
        let cfg = DecomposeConfig { lambda_blur: huge, lambda_rs: huge, ..DecomposeConfig::default() };
        match decompose(&pair, &cfg) {
            Err(Error::SolverDiverged { .. }) => {}
            other => panic!("expected solver divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = DecomposeConfig::default();
        ok.validate().unwrap();
        for cfg in [
            DecomposeConfig { n_levels: 0, ..ok.clone() },
            DecomposeConfig { iters_per_level: 0, ..ok.clone() },
            DecomposeConfig { step_size: 0.0, ..ok.clone() },
            DecomposeConfig { lambda_tv: -1.0, ..ok.clone() },
            DecomposeConfig { charbonnier_eps: 0.0, ..ok.clone() },
            DecomposeConfig { t_anchor_b: 1.5, ..ok.clone() },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn config_serde_uses_exact_field_names() {
        let cfg = DecomposeConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"t_anchor_B\""), "anchor key must serialize as t_anchor_B: {text}");
        let back: DecomposeConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<DecomposeConfig>("{\"bogus\":1}").is_err());
        // Partial configs fill from defaults.
        let partial: DecomposeConfig = serde_json::from_str("{\"n_levels\": 2}").unwrap();
        assert_eq!(partial.n_levels, 2);
        assert_eq!(partial.iters_per_level, cfg.iters_per_level);
    }
}
