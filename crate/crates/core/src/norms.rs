//! ℓp / ℓq norm machinery.
//!
//! Exponents are extended reals in `[1, ∞]`, represented by [`Exponent`] so
//! that the conjugate of `1` is exactly `∞` and vice versa. Everything here is
//! a pure function of its inputs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An exponent `p ∈ [1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub const ONE: Exponent = Exponent::Finite(1.0);
    pub const TWO: Exponent = Exponent::Finite(2.0);

    /// Builds an exponent from a float; `f64::INFINITY` maps to [`Exponent::Infinity`].
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::domain(format!("exponent must be >= 1, got {p}")));
        }
        Ok(if p.is_infinite() {
            Exponent::Infinity
        } else {
            Exponent::Finite(p)
        })
    }

    /// The Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> Exponent {
        match self {
            Exponent::Infinity => Exponent::Finite(1.0),
            Exponent::Finite(p) if p == 1.0 => Exponent::Infinity,
            Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinity => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinity)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Exponent::Infinity),
            _ => {
                let p: f64 = s
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad exponent `{s}`")))?;
                Exponent::new(p)
            }
        }
    }
}

/// `q` with `1/p + 1/q = 1`.
pub fn dual_exponent(p: f64) -> Result<Exponent> {
    Ok(Exponent::new(p)?.dual())
}

/// Threat model: an ℓp ball of radius `epsilon`, with `q` the dual exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationModel {
    pub p: Exponent,
    pub q: Exponent,
    pub epsilon: f64,
}

impl PerturbationModel {
    pub fn new(p: Exponent, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::domain(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self {
            p,
            q: p.dual(),
            epsilon,
        })
    }

    /// Unperturbed model (ε = 0) in ℓ2.
    pub fn clean() -> Self {
        Self {
            p: Exponent::TWO,
            q: Exponent::TWO,
            epsilon: 0.0,
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Self::new(self.p, epsilon)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Standard ℓp norm; `p = ∞` gives `max |v_i|`.
pub fn lp_norm(v: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => max_abs(v),
        Exponent::Finite(p) if p == 1.0 => v.iter().map(|x| x.abs()).sum(),
        Exponent::Finite(p) if p == 2.0 => l2_norm(v),
        Exponent::Finite(p) => {
            // scale by the max modulus so |v_i|^p cannot overflow
            let m = max_abs(v);
            if m == 0.0 || !m.is_finite() {
                return m;
            }
            let s: f64 = v.iter().map(|x| (x.abs() / m).powf(p)).sum();
            m * s.powf(1.0 / p)
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A member `g` of the subdifferential of `‖·‖_q` at `theta`.
///
/// For `theta ≠ 0` the result satisfies `‖g‖_p = 1` and `θᵀg = ‖θ‖_q`. At
/// `theta = 0` the zero vector is returned. Kinks are resolved
/// deterministically: `sign(0) = 0` for `q = 1`, and for `q = ∞` the full mass
/// goes to the lowest-index coordinate of maximal modulus.
pub fn q_norm_subgradient(theta: &[f64], q: Exponent) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    match q {
        Exponent::Infinity => {
            let mut best: Option<(usize, f64)> = None;
            for (i, &t) in theta.iter().enumerate() {
                if t != 0.0 && best.map_or(true, |(_, m)| t.abs() > m) {
                    best = Some((i, t.abs()));
                }
            }
            if let Some((i, _)) = best {
                g[i] = sign(theta[i]);
            }
        }
        Exponent::Finite(q) if q == 1.0 => {
            for (gi, &t) in g.iter_mut().zip(theta) {
                *gi = sign(t);
            }
        }
        Exponent::Finite(q) => {
            let norm = lp_norm(theta, Exponent::Finite(q));
            if norm == 0.0 {
                return g;
            }
            // |θ_i|^{q-1} / ‖θ‖_q^{q-1} as a ratio ≤ 1, so large q cannot overflow
            for (gi, &t) in g.iter_mut().zip(theta) {
                if t != 0.0 {
                    *gi = sign(t) * (t.abs() / norm).powf(q - 1.0);
                }
            }
        }
    }
    g
}

/// The minimiser of `y θᵀu` over `‖u‖_p ≤ ε`: `u* = −ε y ∂‖θ‖_q`.
///
/// For any `x`, `y θᵀ(x + u*) = y θᵀx − ε‖θ‖_q`.
pub fn worst_case_perturbation(theta: &[f64], y: f64, model: &PerturbationModel) -> Vec<f64> {
    let scale = -model.epsilon * y;
    q_norm_subgradient(theta, model.q)
        .into_iter()
        .map(|g| scale * g)
        .collect()
}

/// Euclidean projection of `v` onto `{u : ‖u‖_p ≤ radius}`.
///
/// Exact for `p ∈ {1, 2, ∞}`. Other finite `p` solve the KKT system by nested
/// bisection (per-coordinate shrinkage inside a bisection on the multiplier),
/// followed by a radial rescale so the result is always feasible.
pub fn project_onto_ball(v: &[f64], p: Exponent, radius: f64) -> Vec<f64> {
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    if lp_norm(v, p) <= radius {
        return v.to_vec();
    }
    match p {
        Exponent::Infinity => v.iter().map(|x| x.clamp(-radius, radius)).collect(),
        Exponent::Finite(p) if p == 2.0 => {
            let s = radius / l2_norm(v);
            v.iter().map(|x| x * s).collect()
        }
        Exponent::Finite(p) if p == 1.0 => project_l1(v, radius),
        Exponent::Finite(p) => project_general(v, p, radius),
    }
}

// Sort-based projection onto the ℓ1 ball (Duchi et al. 2008).
fn project_l1(v: &[f64], radius: f64) -> Vec<f64> {
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (j + 1) as f64;
        if m > t {
            tau = t;
        } else {
            break;
        }
    }
    v.iter()
        .map(|&x| sign(x) * (x.abs() - tau).max(0.0))
        .collect()
}

const BISECT_TOL: f64 = 1e-10;

// Solves t + λ p t^{p-1} = a for t ∈ [0, a].
fn shrink(a: f64, lambda: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + lambda * p * mid.powf(p - 1.0) > a {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= BISECT_TOL * a.max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn project_general(v: &[f64], p: f64, radius: f64) -> Vec<f64> {
    let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let norm_at = |lambda: f64| -> f64 {
        let t: Vec<f64> = mags.iter().map(|&a| shrink(a, lambda, p)).collect();
        lp_norm(&t, Exponent::Finite(p))
    };
    let mut hi = 1.0;
    while norm_at(hi) > radius {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECT_TOL * hi.max(1e-300) {
            break;
        }
    }
    let mut u: Vec<f64> = v
        .iter()
        .zip(&mags)
        .map(|(&x, &a)| sign(x) * shrink(a, hi, p))
        .collect();
    let n = lp_norm(&u, Exponent::Finite(p));
    if n > radius {
        let s = radius / n;
        u.iter_mut().for_each(|x| *x *= s);
    }
    u
}
