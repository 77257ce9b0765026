//! Basis systems on an interval and the integrals every model is built from.
//!
//! A [`BasisSystem`] is either a clamped B-spline basis or a Fourier basis.
//! [`gram_matrix`] and [`penalty_matrix`] are evaluated with composite
//! Gauss–Legendre quadrature that is exact for B-spline products; Fourier
//! pairs over a whole number of periods use closed-form orthogonality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};
use crate::quadrature::{merge_breaks, Rule};

/// A closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(FdaError::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Absolute slack allowed when testing membership at the endpoints.
    pub fn tolerance(&self) -> f64 {
        1e-12 * self.lo.abs().max(self.hi.abs()).max(1.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        let tol = self.tolerance();
        t >= self.lo - tol && t <= self.hi + tol
    }

    /// Checks membership and clamps points within tolerance onto the interval.
    pub fn check(&self, t: f64) -> Result<f64> {
        if !self.contains(t) || t.is_nan() {
            return Err(FdaError::OutOfDomain { t, lo: self.lo, hi: self.hi });
        }
        Ok(t.clamp(self.lo, self.hi))
    }

    pub fn same_as(&self, other: &Interval) -> bool {
        let tol = 1e-9 * self.lo.abs().max(self.hi.abs()).max(1.0);
        (self.lo - other.lo).abs() <= tol && (self.hi - other.hi).abs() <= tol
    }

    /// Uniform grid with unit spacing starting at `lo` (one point per day).
    pub fn daily_grid(&self) -> Vec<f64> {
        let n = (self.length() + 1e-9).floor() as usize;
        (0..=n).map(|j| self.lo + j as f64).collect()
    }

    /// `n` equally spaced points including both endpoints.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![self.lo],
            _ => (0..n)
                .map(|j| {
                    if j == n - 1 {
                        self.hi
                    } else {
                        self.lo + self.length() * j as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

/// The derivative operator `D^m` used in roughness penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffOperator {
    pub order: usize,
}

impl DiffOperator {
    pub const IDENTITY: DiffOperator = DiffOperator { order: 0 };
    pub const SECOND: DiffOperator = DiffOperator { order: 2 };

    pub fn new(order: usize) -> Self {
        DiffOperator { order }
    }
}

impl Default for DiffOperator {
    fn default() -> Self {
        DiffOperator::SECOND
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisKind {
    /// Clamped B-splines of the given order (degree + 1). `breaks` holds the
    /// distinct knots including both domain endpoints.
    BSpline { order: usize, breaks: Vec<f64> },
    /// `{1, sin ωt, cos ωt, sin 2ωt, cos 2ωt, ...}` with `ω = 2π / period`,
    /// where `t` is measured from the start of the domain.
    Fourier { period: f64 },
}

/// A finite family of known functions on an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    kind: BasisKind,
    domain: Interval,
    nbasis: usize,
}

impl BasisSystem {
    /// Cubic or other-order B-splines with equally spaced interior knots.
    pub fn bspline(domain: Interval, nbasis: usize, order: usize) -> Result<Self> {
        if order < 1 {
            return Err(FdaError::InvalidBasis("B-spline order must be at least 1".into()));
        }
        if nbasis < order {
            return Err(FdaError::InvalidBasis(format!(
                "nbasis ({nbasis}) must be at least the order ({order})"
            )));
        }
        let intervals = nbasis - order + 1;
        let breaks = Interval::linspace(&domain, intervals + 1);
        Self::bspline_with_breaks(domain, breaks, order)
    }

    /// B-splines over explicit breakpoints, for concentrating knots where the
    /// curves have local features.
    pub fn bspline_with_breaks(domain: Interval, breaks: Vec<f64>, order: usize) -> Result<Self> {
        if order < 1 {
            return Err(FdaError::InvalidBasis("B-spline order must be at least 1".into()));
        }
        if breaks.len() < 2 {
            return Err(FdaError::InvalidBasis("need at least two breakpoints".into()));
        }
        if breaks[0] != domain.lo() || *breaks.last().unwrap() != domain.hi() {
            return Err(FdaError::InvalidBasis(
                "first and last breakpoints must equal the domain endpoints".into(),
            ));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(FdaError::InvalidBasis("breakpoints must be strictly increasing".into()));
        }
        let nbasis = breaks.len() - 2 + order;
        Ok(BasisSystem { kind: BasisKind::BSpline { order, breaks }, domain, nbasis })
    }

    /// Fourier basis whose period is the domain length.
    pub fn fourier(domain: Interval, nbasis: usize) -> Result<Self> {
        Self::fourier_with_period(domain, nbasis, domain.length())
    }

    pub fn fourier_with_period(domain: Interval, nbasis: usize, period: f64) -> Result<Self> {
        if nbasis % 2 == 0 {
            return Err(FdaError::InvalidBasis(format!(
                "Fourier nbasis must be odd (constant plus sine/cosine pairs), got {nbasis}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(FdaError::InvalidBasis(format!("period must be positive, got {period}")));
        }
        Ok(BasisSystem { kind: BasisKind::Fourier { period }, domain, nbasis })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn nbasis(&self) -> usize {
        self.nbasis
    }

    /// B-spline order, or `None` for Fourier bases.
    pub fn order(&self) -> Option<usize> {
        match self.kind {
            BasisKind::BSpline { order, .. } => Some(order),
            BasisKind::Fourier { .. } => None,
        }
    }

    /// Full clamped knot vector (`order` copies of each endpoint).
    pub fn knots(&self) -> Option<Vec<f64>> {
        match &self.kind {
            BasisKind::BSpline { order, breaks } => {
                let mut k = Vec::with_capacity(self.nbasis + order);
                k.extend(std::iter::repeat_n(breaks[0], *order));
                k.extend_from_slice(&breaks[1..breaks.len() - 1]);
                k.extend(std::iter::repeat_n(*breaks.last().unwrap(), *order));
                Some(k)
            }
            BasisKind::Fourier { .. } => None,
        }
    }

    fn check_deriv(&self, deriv: usize) -> Result<()> {
        if let BasisKind::BSpline { order, .. } = self.kind {
            if deriv >= order {
                return Err(FdaError::InvalidOperator { order: deriv, basis_order: order });
            }
        }
        Ok(())
    }

    /// Basis values (or derivatives) at `times`; row `j` holds all `K` functions at `times[j]`.
    pub fn eval(&self, times: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
        self.check_deriv(deriv)?;
        let mut out = DMatrix::zeros(times.len(), self.nbasis);
        for (j, &t) in times.iter().enumerate() {
            let t = self.domain.check(t)?;
            match &self.kind {
                BasisKind::BSpline { .. } => {
                    let (first, vals) = self.bspline_local(t, deriv);
                    for (o, v) in vals.into_iter().enumerate() {
                        out[(j, first + o)] = v;
                    }
                }
                BasisKind::Fourier { period } => {
                    for k in 0..self.nbasis {
                        out[(j, k)] = fourier_value(k, *period, t - self.domain.lo(), deriv);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Nonzero B-spline values at a clamped in-domain point: index of the
    /// first active function and the `order` active values.
    fn bspline_local(&self, t: f64, deriv: usize) -> (usize, Vec<f64>) {
        let BasisKind::BSpline { order, .. } = self.kind else {
            unreachable!("bspline_local called on a Fourier basis")
        };
        let knots = self.knots().expect("B-spline knots");
        let p = order - 1;
        let span = find_span(&knots, self.nbasis, p, t);
        let ders = basis_derivatives(&knots, span, p, t, deriv);
        (span - p, ders[deriv].clone())
    }

    /// Breakpoints relevant to exact quadrature of products of these functions.
    fn quadrature_breaks(&self) -> Vec<f64> {
        match &self.kind {
            BasisKind::BSpline { breaks, .. } => breaks.clone(),
            BasisKind::Fourier { period } => {
                let harmonics = (self.nbasis / 2).max(1) as f64;
                let wavelength = period / harmonics;
                let pieces = (self.domain.length() / wavelength).ceil().max(1.0) as usize;
                self.domain.linspace(pieces + 1)
            }
        }
    }

    fn quadrature_nodes(&self) -> usize {
        match self.kind {
            BasisKind::BSpline { order, .. } => order,
            BasisKind::Fourier { .. } => 64,
        }
    }
}

fn find_span(knots: &[f64], nbasis: usize, p: usize, t: f64) -> usize {
    // Right-continuous everywhere except at the upper endpoint.
    if t >= knots[nbasis] {
        return nbasis - 1;
    }
    if t <= knots[p] {
        return p;
    }
    let (mut low, mut high) = (p, nbasis);
    let mut mid = (low + high) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
        mid = (low + high) / 2;
    }
    mid
}

/// Values and derivatives up to `n` of the `p + 1` B-splines active on `span`
/// (Cox–de Boor triangle with the derivative recurrence).
fn basis_derivatives(knots: &[f64], span: usize, p: usize, t: f64, n: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let pi = p as isize;
    let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
    for r in 0..=pi {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=(n as isize) {
            let mut d = 0.0;
            let rk = r - k;
            let pk = pi - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { -rk };
            let j2 = if r - 1 <= pk { k - 1 } else { pi - r };
            for j in j1..=j2 {
                let (ju, rkj) = (j as usize, (rk + j) as usize);
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                d += a[s2][ju] * ndu[rkj][pk as usize];
            }
            if r <= pk {
                let ku = k as usize;
                a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                d += a[s2][ku] * ndu[r as usize][pk as usize];
            }
            ders[k as usize][r as usize] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= p as f64 - k as f64;
    }
    ders
}

/// Harmonic number, quarter-turn phase and amplitude of a Fourier basis
/// function's `deriv`-th derivative, written as `amp * cos(kωt + q·π/2)`.
fn fourier_term(index: usize, period: f64, deriv: usize) -> (usize, usize, f64) {
    if index == 0 {
        return (0, 0, if deriv == 0 { 1.0 } else { 0.0 });
    }
    let k = index.div_ceil(2);
    let omega = 2.0 * std::f64::consts::PI * k as f64 / period;
    // sin x = cos(x + 3π/2); each derivative adds π/2.
    let base = if index % 2 == 1 { 3 } else { 0 };
    (k, (base + deriv) % 4, omega.powi(deriv as i32))
}

fn fourier_value(index: usize, period: f64, t: f64, deriv: usize) -> f64 {
    let (k, q, amp) = fourier_term(index, period, deriv);
    if k == 0 {
        return amp;
    }
    let x = 2.0 * std::f64::consts::PI * k as f64 * t / period;
    amp * match q {
        0 => x.cos(),
        1 => -x.sin(),
        2 => -x.cos(),
        _ => x.sin(),
    }
}

fn whole_periods(domain: &Interval, period: f64) -> bool {
    let ratio = domain.length() / period;
    ratio >= 1.0 - 1e-12 && (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0)
}

/// `∫ D^da a_k(t) · D^db b_l(t) dt` over the shared domain.
fn cross_integral(a: &BasisSystem, da: usize, b: &BasisSystem, db: usize) -> Result<DMatrix<f64>> {
    if !a.domain.same_as(&b.domain) {
        return Err(FdaError::DomainMismatch(a.domain.lo, a.domain.hi, b.domain.lo, b.domain.hi));
    }
    a.check_deriv(da)?;
    b.check_deriv(db)?;
    let domain = a.domain;
    if let (BasisKind::Fourier { period: pa }, BasisKind::Fourier { period: pb }) = (&a.kind, &b.kind) {
        if pa == pb && whole_periods(&domain, *pa) {
            return Ok(fourier_closed_form(a.nbasis, da, b.nbasis, db, *pa, domain.length()));
        }
    }
    let tol = 1e-12 * domain.lo.abs().max(domain.hi.abs()).max(1.0);
    let breaks = merge_breaks(&a.quadrature_breaks(), &b.quadrature_breaks(), tol);
    let nodes = a.quadrature_nodes().max(b.quadrature_nodes());
    let rule = Rule::composite(&breaks, nodes);
    let mut out = DMatrix::zeros(a.nbasis, b.nbasis);
    let mut row_a = vec![0.0; a.nbasis];
    let mut row_b = vec![0.0; b.nbasis];
    for (&t, &w) in rule.points.iter().zip(&rule.weights) {
        let ra = local_row(a, t, da, &mut row_a);
        let rb = local_row(b, t, db, &mut row_b);
        for k in ra.clone() {
            for l in rb.clone() {
                out[(k, l)] += w * (row_a[k] * row_b[l]);
            }
        }
    }
    Ok(out)
}

/// Fills `row` with basis values at `t` and returns the range of possibly nonzero entries.
fn local_row(basis: &BasisSystem, t: f64, deriv: usize, row: &mut [f64]) -> std::ops::Range<usize> {
    match &basis.kind {
        BasisKind::BSpline { .. } => {
            let (first, vals) = basis.bspline_local(t, deriv);
            let end = first + vals.len();
            row[first..end].copy_from_slice(&vals);
            first..end
        }
        BasisKind::Fourier { period } => {
            for (k, v) in row.iter_mut().enumerate() {
                *v = fourier_value(k, *period, t - basis.domain.lo, deriv);
            }
            0..row.len()
        }
    }
}

fn fourier_closed_form(ka: usize, da: usize, kb: usize, db: usize, period: f64, length: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(ka, kb);
    for i in 0..ka {
        let (hi, qi, ai) = fourier_term(i, period, da);
        for j in 0..kb {
            let (hj, qj, aj) = fourier_term(j, period, db);
            if hi != hj {
                continue;
            }
            out[(i, j)] = if hi == 0 {
                (ai * aj) * length
            } else {
                let c = match (qi + 4 - qj) % 4 {
                    0 => 1.0,
                    2 => -1.0,
                    _ => 0.0,
                };
                (ai * aj) * (0.5 * length) * c
            };
        }
    }
    out
}

/// `J[k, l] = ∫ rows_k(t) cols_l(t) dt` over the common domain.
pub fn gram_matrix(rows: &BasisSystem, cols: &BasisSystem) -> Result<DMatrix<f64>> {
    cross_integral(rows, 0, cols, 0)
}

/// `R[k, l] = ∫ (D^m φ_k)(D^m φ_l) dt` for the operator `D^m`.
pub fn penalty_matrix(basis: &BasisSystem, op: DiffOperator) -> Result<DMatrix<f64>> {
    cross_integral(basis, op.order, basis, op.order)
}

/// Orthonormal coefficient vectors spanning the functions `D^m` annihilates,
/// found by least-squares fits of the monomials of degree < m. Monomials the
/// basis cannot reproduce (e.g. a line in a Fourier basis) are skipped.
pub fn penalty_null_space(basis: &BasisSystem, op: DiffOperator) -> Result<DMatrix<f64>> {
    let k = basis.nbasis();
    let d = basis.domain();
    let t = d.linspace(4 * k + 8);
    let phi = basis.eval(&t, 0)?;
    let svd = phi.clone().svd(true, true);
    let mut cols: Vec<DVector<f64>> = vec![];
    for j in 0..op.order.min(k) {
        let target = DVector::from_iterator(t.len(), t.iter().map(|&x| ((x - d.lo()) / d.length()).powi(j as i32)));
        let c = svd.solve(&target, 1e-12).map_err(|e| FdaError::InvalidBasis(e.to_string()))?;
        if (&phi * &c - &target).amax() < 1e-9 {
            cols.push(c);
        }
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(k, 0));
    }
    Ok(DMatrix::from_columns(&cols).qr().q())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn interval_rejects_reversed_bounds() {
        assert!(matches!(Interval::new(1.0, 1.0), Err(FdaError::InvalidInterval { .. })));
        assert!(Interval::new(2.0, 1.0).is_err());
    }

    #[test]
    fn single_segment_cubic() {
        let b = BasisSystem::bspline(unit(), 4, 4).unwrap();
        match b.kind() {
            BasisKind::BSpline { breaks, .. } => assert_eq!(breaks, &vec![0.0, 1.0]),
            _ => unreachable!(),
        }
        // Bernstein polynomials.
        let row = b.eval(&[0.5], 0).unwrap();
        for (k, expect) in [0.125, 0.375, 0.375, 0.125].iter().enumerate() {
            assert!((row[(0, k)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn streamflow_sized_basis_has_77_interior_knots() {
        let b = BasisSystem::bspline(Interval::new(0.0, 153.0).unwrap(), 81, 4).unwrap();
        let BasisKind::BSpline { breaks, .. } = b.kind() else { unreachable!() };
        assert_eq!(breaks.len() - 2, 77);
        let spacing = 153.0 / 78.0;
        for w in breaks.windows(2) {
            assert!((w[1] - w[0] - spacing).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_functions_is_invalid() {
        assert!(matches!(BasisSystem::bspline(unit(), 2, 4), Err(FdaError::InvalidBasis(_))));
    }

    #[test]
    fn fourier_parity() {
        assert!(matches!(BasisSystem::fourier(unit(), 4), Err(FdaError::InvalidBasis(_))));
        let f = BasisSystem::fourier(Interval::new(0.0, 365.0).unwrap(), 53).unwrap();
        assert_eq!(f.nbasis(), 53);
    }

    #[test]
    fn fourier_values_at_origin() {
        let f = BasisSystem::fourier(Interval::new(0.0, 2.0 * PI).unwrap(), 3).unwrap();
        let row = f.eval(&[0.0], 0).unwrap();
        assert_eq!(row.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0]);
        let t = 0.7;
        let row = f.eval(&[t], 0).unwrap();
        assert!((row[(0, 1)] - t.sin()).abs() < 1e-15);
        assert!((row[(0, 2)] - t.cos()).abs() < 1e-15);
        let d1 = f.eval(&[t], 1).unwrap();
        assert!((d1[(0, 1)] - t.cos()).abs() < 1e-15);
        assert!((d1[(0, 2)] + t.sin()).abs() < 1e-15);
        assert_eq!(d1[(0, 0)], 0.0);
    }

    #[test]
    fn out_of_domain_names_time() {
        let b = BasisSystem::bspline(unit(), 6, 4).unwrap();
        match b.eval(&[0.5, 1.5], 0) {
            Err(FdaError::OutOfDomain { t, .. }) => assert_eq!(t, 1.5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(b.eval(&[1.0 + 1e-13, -1e-13], 0).is_ok());
    }

    #[test]
    fn endpoint_rows_are_closed() {
        let b = BasisSystem::bspline(unit(), 7, 4).unwrap();
        let m = b.eval(&[0.0, 1.0], 0).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 6)], 1.0);
    }

    #[test]
    fn derivative_rejected_at_order() {
        let b = BasisSystem::bspline(unit(), 6, 4).unwrap();
        assert!(matches!(b.eval(&[0.2], 4), Err(FdaError::InvalidOperator { .. })));
        assert!(matches!(
            penalty_matrix(&b, DiffOperator::new(4)),
            Err(FdaError::InvalidOperator { order: 4, basis_order: 4 })
        ));
    }

    #[test]
    fn fourier_gram_is_diagonal() {
        let f = BasisSystem::fourier(Interval::new(0.0, 2.0 * PI).unwrap(), 3).unwrap();
        let g = gram_matrix(&f, &f).unwrap();
        let expect = [2.0 * PI, PI, PI];
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { expect[i] } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fourier_closed_form_matches_quadrature() {
        // Period differs from the domain length, forcing the quadrature path.
        let d = Interval::new(0.0, 3.0).unwrap();
        let f = BasisSystem::fourier_with_period(d, 5, 3.0).unwrap();
        let g = BasisSystem::fourier_with_period(d, 5, 3.0 + 1e-7).unwrap();
        let exact = penalty_matrix(&f, DiffOperator::new(2)).unwrap();
        let quad = cross_integral(&g, 2, &g, 2).unwrap();
        assert!((exact - quad).abs().max() < 1e-4);
    }

    #[test]
    fn constant_times_constant_on_unit_interval() {
        let b = BasisSystem::bspline(unit(), 1, 1).unwrap();
        let f = BasisSystem::fourier(unit(), 3).unwrap();
        assert!((gram_matrix(&b, &b).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((gram_matrix(&b, &f).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn order_zero_penalty_is_gram() {
        let b = BasisSystem::bspline(unit(), 9, 4).unwrap();
        assert_eq!(penalty_matrix(&b, DiffOperator::IDENTITY).unwrap(), gram_matrix(&b, &b).unwrap());
    }

    #[test]
    fn mismatched_domains_rejected() {
        let a = BasisSystem::bspline(unit(), 5, 4).unwrap();
        let b = BasisSystem::bspline(Interval::new(0.0, 2.0).unwrap(), 5, 4).unwrap();
        assert!(matches!(gram_matrix(&a, &b), Err(FdaError::DomainMismatch(..))));
    }

    #[test]
    fn mixed_knot_gram_is_exact_transpose() {
        let d = Interval::new(30.0, 153.0).unwrap();
        let a = BasisSystem::bspline(d, 13, 4).unwrap();
        let b = BasisSystem::bspline(d, 8, 3).unwrap();
        let ab = gram_matrix(&a, &b).unwrap();
        let ba = gram_matrix(&b, &a).unwrap();
        assert_eq!(ab, ba.transpose());
    }

    #[test]
    fn null_space_dimensions() {
        let b = BasisSystem::bspline(unit(), 9, 4).unwrap();
        let n = penalty_null_space(&b, DiffOperator::SECOND).unwrap();
        assert_eq!(n.ncols(), 2);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).amax() < 1e-12);
        let r = penalty_matrix(&b, DiffOperator::SECOND).unwrap();
        assert!((&r * &n).amax() < 1e-10 * r.amax());
        assert_eq!(penalty_null_space(&b, DiffOperator::IDENTITY).unwrap().ncols(), 0);
        let f = BasisSystem::fourier(unit(), 5).unwrap();
        assert_eq!(penalty_null_space(&f, DiffOperator::SECOND).unwrap().ncols(), 1);
    }

    #[test]
    fn d2_penalty_annihilates_lines() {
        let d = Interval::new(0.0, 10.0).unwrap();
        let b = BasisSystem::bspline(d, 12, 4).unwrap();
        let r = penalty_matrix(&b, DiffOperator::SECOND).unwrap();
        // Greville abscissae reproduce linear functions exactly.
        let knots = b.knots().unwrap();
        let c = nalgebra::DVector::from_iterator(
            12,
            (0..12).map(|k| {
                let g = (knots[k + 1] + knots[k + 2] + knots[k + 3]) / 3.0;
                2.0 - 0.5 * g
            }),
        );
        let vals = b.eval(&[1.3, 7.7], 0).unwrap() * &c;
        assert!((vals[0] - (2.0 - 0.65)).abs() < 1e-12);
        assert!((c.transpose() * &r * &c)[(0, 0)].abs() < 1e-10);
    }
}
