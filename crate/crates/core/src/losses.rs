//! Training objectives. Every loss has a `*_grad` twin returning the value
//! together with its gradient with respect to the inputs that receive
//! gradients during training. Accumulation is in `f64`.
//!
//! Discriminator convention: `D -> 1` means "translated image", `D -> 0`
//! means "actual rendering".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub style_w: f64,
    pub content_w: f64,
    pub jaccard_delta: f64,
    pub noise_sigma: f64,
    pub huber_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            style_w: 1.0,
            content_w: 400.0,
            jaccard_delta: 0.25,
            noise_sigma: 0.15,
            huber_threshold: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("style_w", self.style_w),
            ("content_w", self.content_w),
            ("noise_sigma", self.noise_sigma),
            ("huber_threshold", self.huber_threshold),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.jaccard_delta > 0.0 && self.jaccard_delta < 1.0) {
            return Err(Error::Config(format!(
                "jaccard_delta must be in (0, 1), got {}",
                self.jaccard_delta
            )));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c == p)
}

/// `d/dp log(clamp(p))`; zero where the clamp is active.
fn dlog(p: f64) -> f64 {
    let (c, free) = clamp_prob(p);
    if free {
        1.0 / c
    } else {
        0.0
    }
}

/// `d/dp log(1 - clamp(p))`.
fn dlog1m(p: f64) -> f64 {
    let (c, free) = clamp_prob(p);
    if free {
        -1.0 / (1.0 - c)
    } else {
        0.0
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{a} values"), format!("{b} values")));
    }
    Ok(())
}

/// Discriminator loss, minimized by the discriminator:
/// `-mean[log D(translated) + log(1 - D(rendered))]`.
pub fn loss_discriminator<T: Copy + Into<f64>>(rendered: &[T], translated: &[T]) -> Result<f64> {
    Ok(loss_discriminator_grad(rendered, translated)?.0)
}

/// Value and gradients with respect to the rendered and translated scores.
pub fn loss_discriminator_grad<T: Copy + Into<f64>>(
    rendered: &[T],
    translated: &[T],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len(rendered.len(), translated.len())?;
    if rendered.is_empty() {
        return Err(Error::shape("non-empty batch", "empty batch"));
    }
    let n = rendered.len() as f64;
    let mut total = 0.0;
    let mut g_r = Vec::with_capacity(rendered.len());
    let mut g_t = Vec::with_capacity(translated.len());
    for (&r, &t) in rendered.iter().zip(translated) {
        let (r, t): (f64, f64) = (r.into(), t.into());
        total += clamp_prob(t).0.ln() + (1.0 - clamp_prob(r).0).ln();
        g_r.push(-dlog1m(r) / n);
        g_t.push(-dlog(t) / n);
    }
    Ok((-total / n, g_r, g_t))
}

/// Style loss for the image-to-rendering translator: `mean log(1 - s)`.
///
/// Minimizing it drives `s` towards one, so the caller passes the
/// probability that `D` assigns to the *rendering* class, `1 - D(F(x))`;
/// see [`rendering_score`].
pub fn loss_style<T: Copy + Into<f64>>(scores: &[T]) -> f64 {
    loss_style_grad(scores).0
}

pub fn loss_style_grad<T: Copy + Into<f64>>(scores: &[T]) -> (f64, Vec<f64>) {
    let n = scores.len().max(1) as f64;
    let mut total = 0.0;
    let grad = scores
        .iter()
        .map(|&s| {
            let s: f64 = s.into();
            total += (1.0 - clamp_prob(s).0).ln();
            dlog1m(s) / n
        })
        .collect();
    (total / n, grad)
}

/// Non-saturating translator objective `-mean log(1 - D(F(x)))`, with
/// gradient with respect to the discriminator outputs.
///
/// It has the same fixed point as [`loss_style`] on the rendering score but
/// keeps a useful gradient when the discriminator confidently recognizes
/// the translations, which is where `log(1 - s)` flattens out.
pub fn loss_style_nonsaturating_grad<T: Copy + Into<f64>>(d_translated: &[T]) -> (f64, Vec<f64>) {
    let n = d_translated.len().max(1) as f64;
    let mut total = 0.0;
    let grad = d_translated
        .iter()
        .map(|&p| {
            let p: f64 = p.into();
            total -= (1.0 - clamp_prob(p).0).ln();
            -dlog1m(p) / n
        })
        .collect();
    (total / n, grad)
}

/// Probability of the "actual rendering" class for a discriminator output.
pub fn rendering_score(d_output: f64) -> f64 {
    1.0 - d_output
}

/// Soft intersection over union, `sum(a*b) / sum(a + b - a*b)`; zero when
/// both maps are empty.
pub fn relaxed_jaccard<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        inter += x * y;
        union += x + y - x * y;
    }
    Ok(if union == 0.0 { 0.0 } else { inter / union })
}

/// Value of [`relaxed_jaccard`] and its gradient with respect to `b`.
pub fn relaxed_jaccard_grad<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> Result<(f64, Vec<f64>)> {
    check_len(a.len(), b.len())?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        inter += x * y;
        union += x + y - x * y;
    }
    if union == 0.0 {
        return Ok((0.0, vec![0.0; b.len()]));
    }
    let j = inter / union;
    // dJ/dy = (x * U - I * (1 - x)) / U^2
    let grad = a
        .iter()
        .map(|&x| {
            let x: f64 = x.into();
            (x * union - inter * (1.0 - x)) / (union * union)
        })
        .collect();
    Ok((j, grad))
}

/// Hinge on the silhouette agreement between actual and pseudo renderings:
/// `mean max(0, delta - J(rendered, translated))`.
pub fn loss_jaccard<A: Copy + Into<f64>, B: Copy + Into<f64>>(
    rendered: &[&[A]],
    translated: &[&[B]],
    delta: f64,
) -> Result<f64> {
    Ok(loss_jaccard_grad(rendered, translated, delta)?.0)
}

/// Value and gradient with respect to each translated alpha map.
pub fn loss_jaccard_grad<A: Copy + Into<f64>, B: Copy + Into<f64>>(
    rendered: &[&[A]],
    translated: &[&[B]],
    delta: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_len(rendered.len(), translated.len())?;
    let n = rendered.len().max(1) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(rendered.len());
    for (r, t) in rendered.iter().zip(translated) {
        let (j, g) = relaxed_jaccard_grad(r, t)?;
        if j < delta {
            total += delta - j;
            grads.push(g.into_iter().map(|v| -v / n).collect());
        } else {
            grads.push(vec![0.0; t.len()]);
        }
    }
    Ok((total / n, grads))
}

/// Huber penalty: `d^2 / 2` for `|d| <= threshold`, else
/// `threshold * (|d| - threshold / 2)`.
pub fn huber(d: f64, threshold: f64) -> f64 {
    let a = d.abs();
    if a <= threshold {
        0.5 * d * d
    } else {
        threshold * (a - 0.5 * threshold)
    }
}

pub fn huber_derivative(d: f64, threshold: f64) -> f64 {
    d.clamp(-threshold, threshold)
}

/// Mean elementwise Huber penalty of `x - y`, and its gradient with respect
/// to `y`.
pub fn mean_huber_grad<A: Copy + Into<f64>, B: Copy + Into<f64>>(
    x: &[A],
    y: &[B],
    threshold: f64,
) -> Result<(f64, Vec<f64>)> {
    check_len(x.len(), y.len())?;
    let n = x.len().max(1) as f64;
    let mut total = 0.0;
    let grad = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a.into() - b.into();
            total += huber(d, threshold);
            -huber_derivative(d, threshold) / n
        })
        .collect();
    Ok((total / n, grad))
}

/// Cycle-consistency content loss: mean elementwise Huber of
/// `x - x_roundtrip`.
pub fn loss_cycle<A: Copy + Into<f64>, B: Copy + Into<f64>>(x: &[A], x_roundtrip: &[B], threshold: f64) -> Result<f64> {
    Ok(mean_huber_grad(x, x_roundtrip, threshold)?.0)
}

/// Two-view reconstruction loss for one object: mean Huber difference
/// between the rendered prediction and the pseudo-rendering in each view,
/// summed over the two views.
pub fn loss_reconstruction<A: Copy + Into<f64>, B: Copy + Into<f64>>(
    rend_x: &[A],
    trans_x: &[B],
    rend_y: &[A],
    trans_y: &[B],
    threshold: f64,
) -> Result<f64> {
    Ok(loss_reconstruction_grad(rend_x, trans_x, rend_y, trans_y, threshold)?.0)
}

/// Value and gradients with respect to both renderings.
pub fn loss_reconstruction_grad<A: Copy + Into<f64>, B: Copy + Into<f64>>(
    rend_x: &[A],
    trans_x: &[B],
    rend_y: &[A],
    trans_y: &[B],
    threshold: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    // gradient of mean Huber(t - r) with respect to r
    let (lx, gx) = mean_huber_grad(trans_x, rend_x, threshold)?;
    let (ly, gy) = mean_huber_grad(trans_y, rend_y, threshold)?;
    Ok((lx + ly, gx, gy))
}

/// `(L_Fi2r, L_Fr2i)` from the content, style and Jaccard components.
pub fn combined_translator_losses(content: f64, style: f64, jaccard: f64, weights: &LossWeights) -> (f64, f64) {
    (
        weights.content_w * content + weights.style_w * style + jaccard,
        weights.content_w * content,
    )
}
