//! The constraint map Φ(g, π) = (-2μ, J), the energy condition, and the first
//! and second order calculus of Φ.
//!
//! ```text
//! Φ(g, π) = ( -(Scal + n(n-1)) + 2 tr π - (tr π)²/(n-1) + |π|²,  div π )
//! ```
//!
//! with all traces, norms and divergences taken with respect to g. Δ denotes
//! tr Hess (non-positive spectrum).

use serde::{Deserialize, Serialize};

use crate::calculus::covariant_derivative;
use crate::data::InitialData;
use crate::error::Result;
use crate::field::{pointwise_raw, split_fields, Field, Kind};
use crate::geometry::Geometry;

/// Energy and momentum densities with the pointwise DEC margin μ - |J|_g.
#[derive(Debug, Clone)]
pub struct ConstraintDensities {
    pub mu: Field,
    pub j: Field,
    pub margin: Field,
}

/// Φ(g, π) as (first slot, second slot).
pub fn eval_phi(data: &InitialData) -> Result<(Field, Field)> {
    let geo = data.geometry()?;
    eval_phi_with(&geo, &data.pi)
}

/// Φ evaluated with a precomputed geometry of g.
pub fn eval_phi_with(geo: &Geometry, pi: &Field) -> Result<(Field, Field)> {
    let n = geo.n() as f64;
    let tr = geo.trace(pi);
    let sq = geo.dot2(pi, pi);
    let first = geo
        .scalar_curvature_deviation()
        .scale(-1.0)
        .axpy(2.0, &tr)
        .axpy(-1.0 / (n - 1.0), &tr.mul_scalar(&tr))
        .add(&sq);
    let second = geo.divergence(pi)?;
    Ok((first, second))
}

/// μ = -(first slot)/2, J = second slot, margin = μ - |J|_g.
pub fn densities(data: &InitialData) -> Result<ConstraintDensities> {
    let geo = data.geometry()?;
    densities_with(&geo, &data.pi)
}

pub fn densities_with(geo: &Geometry, pi: &Field) -> Result<ConstraintDensities> {
    let (first, j) = eval_phi_with(geo, pi)?;
    let mu = first.scale(-0.5);
    let margin = mu.sub(&geo.norm1(&j));
    Ok(ConstraintDensities { mu, j, margin })
}

/// Options of the dominant energy condition test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecOptions {
    /// Strict test μ > (1+γ)|J|; otherwise μ >= (1+γ)|J| - `tolerance`.
    pub strict: bool,
    pub gamma: f64,
    /// Tolerance of the non-strict test.
    pub tolerance: f64,
    /// Skip the inner and outer boundary shells.
    pub interior_only: bool,
}

impl Default for DecOptions {
    fn default() -> Self {
        DecOptions {
            strict: true,
            gamma: 0.0,
            tolerance: 1e-12,
            interior_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecReport {
    pub holds: bool,
    pub strict: bool,
    pub gamma: f64,
    /// Minimum of μ - (1+γ)|J|_g over the tested nodes.
    pub min_margin: f64,
    pub mean_margin: f64,
    pub max_margin: f64,
    pub worst_radius: f64,
    pub worst_direction: Vec<f64>,
    /// (r, min over the sphere of μ - (1+γ)|J|_g) for each radial node.
    pub profile: Vec<(f64, f64)>,
}

/// Tests μ > (1+γ)|J|_g (or the non-strict variant) at every node.
pub fn check_dec(data: &InitialData, opts: &DecOptions) -> Result<DecReport> {
    let d = densities(data)?;
    let geo = data.geometry()?;
    Ok(dec_report(&geo, &d, opts))
}

/// DEC report from precomputed densities.
pub fn dec_report(geo: &Geometry, d: &ConstraintDensities, opts: &DecOptions) -> DecReport {
    let grid = geo.grid();
    let (nr, na) = (grid.nr(), grid.na());
    let jn = geo.norm1(&d.j);
    let range = if opts.interior_only {
        grid.interior()
    } else {
        0..nr
    };
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut worst = (0, 0);
    let mut profile = Vec::with_capacity(nr);
    for k in 0..nr {
        let mut shell_min = f64::INFINITY;
        for j in 0..na {
            let p = k * na + j;
            let m = d.mu.at(0, p) - (1.0 + opts.gamma) * jn.at(0, p);
            shell_min = shell_min.min(m);
            if range.contains(&k) {
                if m < min {
                    min = m;
                    worst = (k, j);
                }
                max = max.max(m);
                sum += m;
                count += 1;
            }
        }
        profile.push((grid.r()[k], shell_min));
    }
    let holds = if opts.strict {
        min > 0.0
    } else {
        min >= -opts.tolerance
    };
    DecReport {
        holds,
        strict: opts.strict,
        gamma: opts.gamma,
        min_margin: min,
        mean_margin: sum / count.max(1) as f64,
        max_margin: max,
        worst_radius: grid.r()[worst.0],
        worst_direction: grid.omega(worst.1).to_vec(),
        profile,
    }
}

/// Derivative data of π reused by the linearization and its adjoint.
struct MomentumParts {
    dpi: Field,
    divpi: Field,
}

fn momentum_parts(geo: &Geometry, pi: &Field) -> Result<MomentumParts> {
    let dpi = geo.covariant(pi)?;
    let divpi = geo.divergence(pi)?;
    Ok(MomentumParts { dpi, divpi })
}

/// DΦ|_(g,π)(h, w).
pub fn linearize_phi(data: &InitialData, h: &Field, w: &Field) -> Result<(Field, Field)> {
    let geo = data.geometry()?;
    linearize_phi_with(&geo, &data.pi, h, w)
}

pub fn linearize_phi_with(
    geo: &Geometry,
    pi: &Field,
    h: &Field,
    w: &Field,
) -> Result<(Field, Field)> {
    let grid = geo.grid();
    let n = geo.n();
    let nf = n as f64;
    let mp = momentum_parts(geo, pi)?;
    let trh = geo.trace(h);
    let lap_trh = geo.laplacian(&trh)?;
    let divh = geo.divergence(h)?;
    let divdivh = geo.divergence(&divh)?;
    let divw = geo.divergence(w)?;
    let dtrh = covariant_derivative(&trh)?;
    let dh = geo.covariant(h)?;
    let wt = h.weight().min(w.weight());
    let inputs = [
        geo.inverse(),
        geo.ricci(),
        pi,
        &mp.dpi,
        h,
        w,
        &lap_trh,
        &divdivh,
        &divh,
        &divw,
        &dtrh,
        &dh,
    ];
    let both = pointwise_raw(grid, &inputs, n + 1, |_, v, out| {
        let [gi, ric, p, dp, hh, ww, lap, dd, dvh, dvw, dtr, dhh] = [
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11],
        ];
        let up = |t: &[f64]| raise_both(n, gi, t);
        let hup = up(hh);
        let pup = up(p);
        let trp: f64 = gi.iter().zip(p).map(|(a, b)| a * b).sum();
        let trw: f64 = gi.iter().zip(ww).map(|(a, b)| a * b).sum();
        let h_ric: f64 = hup.iter().zip(ric).map(|(a, b)| a * b).sum();
        let h_pi: f64 = hup.iter().zip(p).map(|(a, b)| a * b).sum();
        let pi_w: f64 = pup.iter().zip(ww).map(|(a, b)| a * b).sum();
        // ⟨h, π∘π⟩ = h^{ij} g^{kl} π_ik π_jl
        let mut h_pp = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        s += gi[k * n + l] * p[i * n + k] * p[j * n + l];
                    }
                }
                h_pp += hup[i * n + j] * s;
            }
        }
        out[0] = lap[0] - dd[0] + h_ric + 2.0 * (1.0 - trp / (nf - 1.0)) * (trw - h_pi)
            - 2.0 * h_pp
            + 2.0 * pi_w;
        // mixed π^j_k = g^{ja} π_ak
        let mixed =
            |j: usize, k: usize| -> f64 { (0..n).map(|a| gi[j * n + a] * p[a * n + k]).sum() };
        for k in 0..n {
            let mut s = dvw[k];
            for i in 0..n {
                for j in 0..n {
                    s -= hup[i * n + j] * dp[(i * n + j) * n + k];
                    s -= 0.5 * pup[i * n + j] * dhh[(k * n + i) * n + j];
                }
            }
            for j in 0..n {
                let m = mixed(j, k);
                s += (-dvh[j] + 0.5 * dtr[j]) * m;
            }
            out[1 + k] = s;
        }
    });
    let mut parts = split_fields(grid, &both, &[Kind::Scalar, Kind::OneForm], wt);
    let second = parts.pop().expect("form");
    Ok((parts.pop().expect("scalar"), second))
}

/// DΦ*_(g,π)(V, X) as a pair of symmetric tensors. X is a 1-form; its
/// vector is obtained with g.
pub fn adjoint_phi(data: &InitialData, v: &Field, x: &Field) -> Result<(Field, Field)> {
    let geo = data.geometry()?;
    adjoint_phi_with(&geo, &data.pi, v, x)
}

pub fn adjoint_phi_with(
    geo: &Geometry,
    pi: &Field,
    vf: &Field,
    x: &Field,
) -> Result<(Field, Field)> {
    let grid = geo.grid();
    let n = geo.n();
    let nf = n as f64;
    let mp = momentum_parts(geo, pi)?;
    let hess = geo.hessian(vf)?;
    let dx = geo.covariant(x)?;
    let wt = vf.weight().min(x.weight());
    let inputs = [
        geo.inverse(),
        geo.metric(),
        geo.ricci(),
        pi,
        &mp.dpi,
        &mp.divpi,
        vf,
        &hess,
        x,
        &dx,
    ];
    let nn = n * n;
    let both = pointwise_raw(grid, &inputs, 2 * n * n, |_, v, out| {
        let [gi, g, ric, p, dp, dvp, vv, hs, xx, dxx] =
            [v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]];
        let vv = vv[0];
        let lap: f64 = gi.iter().zip(hs).map(|(a, b)| a * b).sum();
        let trp: f64 = gi.iter().zip(p).map(|(a, b)| a * b).sum();
        let xup: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| gi[i * n + j] * xx[j]).sum())
            .collect();
        let divx: f64 = gi.iter().zip(dxx).map(|(a, b)| a * b).sum();
        let divp_x: f64 = dvp.iter().zip(&xup).map(|(a, b)| a * b).sum();
        // L_X g = ∇_i X_j + ∇_j X_i; ⟨π, L_X g⟩
        let pup = raise_both(n, gi, p);
        let mut pi_lx = 0.0;
        for i in 0..n {
            for j in 0..n {
                pi_lx += pup[i * n + j] * (dxx[i * n + j] + dxx[j * n + i]);
            }
        }
        let c = 1.0 - trp / (nf - 1.0);
        // M_ij = π_jk ∇_i X^k = (∇X)_{il} g^{lk} π_kj
        let mut m = vec![0.0; nn];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    for k in 0..n {
                        s += dxx[i * n + l] * gi[l * n + k] * p[k * n + j];
                    }
                }
                m[i * n + j] = s;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let ij = i * n + j;
                let mut pp = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        pp += p[i * n + k] * gi[k * n + l] * p[l * n + j];
                    }
                }
                let xdp: f64 = (0..n).map(|k| xup[k] * dp[(k * n + i) * n + j]).sum();
                out[ij] =
                    lap * g[ij] - hs[ij] + vv * ric[ij] - 2.0 * vv * c * p[ij] - 2.0 * vv * pp
                        + 0.5 * (m[ij] + m[j * n + i])
                        - 0.5 * divp_x * g[ij]
                        - 0.25 * pi_lx * g[ij]
                        + 0.5 * xdp
                        + 0.5 * divx * p[ij];
                out[nn + ij] =
                    -0.5 * (dxx[ij] + dxx[j * n + i]) + 2.0 * vv * c * g[ij] + 2.0 * vv * p[ij];
            }
        }
    });
    let mut parts = split_fields(grid, &both, &[Kind::SymTensor, Kind::SymTensor], wt);
    let second = parts.pop().expect("tensor");
    Ok((parts.pop().expect("tensor"), second))
}

/// 𝒬(e, η) = Φ(g, π) - DΦ|_(b,0)(e, π).
pub fn quadratic_remainder(data: &InitialData) -> Result<(Field, Field)> {
    let (f1, f2) = eval_phi(data)?;
    let bg = Geometry::background(data.grid());
    let zero = Field::zeros(data.grid(), Kind::SymTensor);
    let (l1, l2) = linearize_phi_with(&bg, &zero, &data.e, &data.pi)?;
    Ok((f1.sub(&l1), f2.sub(&l2)))
}

/// L² pairing ∫ (a V + ⟨B, X⟩_g) dμ^g of (scalar, 1-form) pairs.
pub fn pair_scalar_form(geo: &Geometry, a: &(Field, Field), b: &(Field, Field)) -> f64 {
    let s = a.0.mul_scalar(&b.0).add(&geo.dot1(&a.1, &b.1));
    geo.integrate(&s)
}

/// L² pairing ∫ (⟨h, A⟩_g + ⟨w, B⟩_g) dμ^g of pairs of symmetric tensors.
pub fn pair_tensors(geo: &Geometry, a: &(Field, Field), b: &(Field, Field)) -> f64 {
    let s = geo.dot2(&a.0, &b.0).add(&geo.dot2(&a.1, &b.1));
    geo.integrate(&s)
}

/// T^{ij} = g^{ia} g^{jb} T_ab at one node.
fn raise_both(n: usize, gi: &[f64], t: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; n * n];
    for i in 0..n {
        for b in 0..n {
            tmp[i * n + b] = (0..n).map(|a| gi[i * n + a] * t[a * n + b]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|b| tmp[i * n + b] * gi[b * n + j]).sum();
        }
    }
    out
}
