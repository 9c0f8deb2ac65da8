//! Latent perceived-returns model and the shared dataset representation.
//!
//! Perceived returns are `π̃ᵢ = Xᵢθ − Priceᵢ + (error)`: the coefficient on
//! the observed price is fixed at −1, which pins the latent variable to
//! monetary units. Only `θ` is represented; its split into preference and
//! misperception components is not identified.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats;

/// Coefficient on observed price in the latent index.
pub const PRICE_COEF: f64 = -1.0;

/// Structural parameters of the latent model.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModelParams<T: Real> {
    pub theta: DVector<T>,
    pub sigma: T,
    pub rho: T,
    pub sigma_zeta: T,
}

impl<T: Real> LatentModelParams<T> {
    pub fn new(theta: DVector<T>, sigma: T, rho: T, sigma_zeta: T) -> Result<Self> {
        if !(sigma > T::zero()) || !(sigma_zeta > T::zero()) {
            return Err(Error::Domain("sigma and sigma_zeta must be positive".into()));
        }
        Ok(LatentModelParams { theta, sigma, rho, sigma_zeta })
    }

    pub fn price_coef(&self) -> T {
        T::of(PRICE_COEF)
    }
}

/// Observed data: choice, price, covariates `x` and instruments `z`.
///
/// `x` always starts with the constant column and every column of `x` is
/// also a column of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    s: Vec<bool>,
    price: DVector<T>,
    x: DMatrix<T>,
    z: DMatrix<T>,
    x_in_z: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(s: Vec<bool>, price: DVector<T>, x: DMatrix<T>, z: DMatrix<T>) -> Result<Self> {
        let n = s.len();
        if price.len() != n || x.nrows() != n || z.nrows() != n {
            return Err(Error::InvalidSample("row counts of s, price, x, z differ".into()));
        }
        let (k, m) = (x.ncols(), z.ncols());
        if k == 0 {
            return Err(Error::InvalidSample("x needs at least the constant column".into()));
        }
        if n < m + 1 {
            return Err(Error::InvalidSample(format!("n = {n} too small for {m} instrument columns")));
        }
        if price.iter().chain(x.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("non-finite entry".into()));
        }
        if x.column(0).iter().any(|&v| v != T::one()) {
            return Err(Error::InvalidSample("first column of x must be the constant 1".into()));
        }
        let mut x_in_z = Vec::with_capacity(k);
        for j in 0..k {
            let hit = (0..m).find(|&c| x.column(j) == z.column(c));
            match hit {
                Some(c) => x_in_z.push(c),
                None => {
                    return Err(Error::InvalidSample(format!("x_{} is not a column of z", j + 1)));
                }
            }
        }
        Ok(Dataset { s, price, x, z, x_in_z })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    pub fn s(&self) -> &[bool] {
        &self.s
    }

    pub fn price(&self) -> &DVector<T> {
        &self.price
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<T> {
        &self.z
    }

    /// Index of the `z` column that duplicates each `x` column.
    pub fn x_columns_in_z(&self) -> &[usize] {
        &self.x_in_z
    }

    /// `z` columns that are not covariates.
    pub fn excluded_instruments(&self) -> Vec<usize> {
        (0..self.m()).filter(|c| !self.x_in_z.contains(c)).collect()
    }

    pub fn z_name(c: usize) -> String {
        format!("z_{}", c + 1)
    }

    /// `Xᵢ·θ`.
    pub fn x_dot(&self, row: usize, theta: &DVector<T>) -> T {
        let mut v = T::zero();
        for j in 0..self.k() {
            v += self.x[(row, j)] * theta[j];
        }
        v
    }

    /// Same data with prices scaled by `c` (and nothing else).
    pub fn with_scaled_price(&self, c: T) -> Self {
        Dataset { price: &self.price * c, ..self.clone() }
    }

    pub fn with_s(&self, s: Vec<bool>) -> Result<Self> {
        Dataset::new(s, self.price.clone(), self.x.clone(), self.z.clone())
    }

    pub fn mean_choice(&self) -> T {
        T::of(self.s.iter().filter(|&&v| v).count() as f64 / self.n() as f64)
    }
}

/// Simulator-only latent components, one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLatent<T: Real> {
    pub u: DVector<T>,
    pub nu: DVector<T>,
    pub eps: DVector<T>,
    pub pi: DVector<T>,
}

/// Observed data plus, for simulated samples, the hidden latent block.
///
/// Estimators take `&Dataset`, so the hidden block never reaches them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub data: Dataset<T>,
    pub hidden: Option<HiddenLatent<T>>,
}

impl<T: Real> Sample<T> {
    pub fn new(data: Dataset<T>, hidden: Option<HiddenLatent<T>>) -> Result<Self> {
        if let Some(h) = &hidden {
            let n = data.n();
            if h.u.len() != n || h.nu.len() != n || h.eps.len() != n || h.pi.len() != n {
                return Err(Error::InvalidSample("hidden block length differs from n".into()));
            }
            for (i, (&s, &pi)) in data.s().iter().zip(h.pi.iter()).enumerate() {
                if s != (pi >= T::zero()) {
                    return Err(Error::InvalidSample(format!("row {i}: choice disagrees with latent sign")));
                }
            }
        }
        Ok(Sample { data, hidden })
    }
}

/// Which estimator produced a [`ReturnsDistribution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReturnsKind {
    Probit,
    ControlFunction,
    /// Moment-inequality bound at the given price weight `φ`.
    MiBound { phi: f64 },
}

/// Per-row normal distributions of estimated perceived returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsDistribution<T: Real> {
    pub location: Vec<T>,
    pub scale: T,
    pub kind: ReturnsKind,
}

impl<T: Real> ReturnsDistribution<T> {
    pub fn new(location: Vec<T>, scale: T, kind: ReturnsKind) -> Result<Self> {
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::Domain(format!("returns scale must be positive, got {scale}")));
        }
        if location.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite returns location".into()));
        }
        Ok(ReturnsDistribution { location, scale, kind })
    }
}

/// `Xᵢθ − Priceᵢ (+ ûᵢρ)`.
pub fn latent_index<T: Real>(params: &LatentModelParams<T>, data: &Dataset<T>, row: usize, include_u: Option<T>) -> T {
    let base = data.x_dot(row, &params.theta) + params.price_coef() * data.price()[row];
    match include_u {
        Some(u) => base + u * params.rho,
        None => base,
    }
}

/// Selection probability. Without a control this is `Φ((Xᵢθ − Priceᵢ)/σ)`;
/// with a first-stage residual it is the control-function index scaled by
/// `σ_ζ`.
pub fn selection_probability<T: Real>(params: &LatentModelParams<T>, data: &Dataset<T>, row: usize, control: Option<T>) -> T {
    let idx = latent_index(params, data, row, control);
    let scale = if control.is_some() { params.sigma_zeta } else { params.sigma };
    stats::cdf(idx / scale)
}

// ---------------------------------------------------------------------------
// CSV I/O

fn fmt_real<T: Real>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn parse_real<T: Real>(s: &str, line: usize) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::of)
        .map_err(|e| Error::Parse(format!("line {line}: `{s}`: {e}")))
}

/// Sibling path holding the hidden block: `data.csv` → `data.hidden.csv`.
pub fn hidden_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.hidden.csv"))
}

/// Writes `s,price,x_1..x_k,z_1..z_m` and, when present, the hidden block.
pub fn write_sample<T: Real>(sample: &Sample<T>, path: &Path) -> Result<()> {
    let d = &sample.data;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["s".to_string(), "price".to_string()];
    header.extend((1..=d.k()).map(|j| format!("x_{j}")));
    header.extend((1..=d.m()).map(|j| format!("z_{j}")));
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![if d.s()[i] { "1".to_string() } else { "0".to_string() }, fmt_real(d.price()[i])];
        rec.extend((0..d.k()).map(|j| fmt_real(d.x()[(i, j)])));
        rec.extend((0..d.m()).map(|j| fmt_real(d.z()[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(h) = &sample.hidden {
        let mut w = csv::Writer::from_path(hidden_path(path))?;
        w.write_record(["u", "nu", "eps", "pi"])?;
        for i in 0..d.n() {
            w.write_record([fmt_real(h.u[i]), fmt_real(h.nu[i]), fmt_real(h.eps[i]), fmt_real(h.pi[i])])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads a dataset CSV; the hidden sibling is loaded when it exists.
pub fn read_sample<T: Real>(path: &Path) -> Result<Sample<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 3 || header[0] != "s" || header[1] != "price" {
        return Err(Error::Parse("header must start with `s,price`".into()));
    }
    let k = header.iter().filter(|h| h.starts_with("x_")).count();
    let m = header.iter().filter(|h| h.starts_with("z_")).count();
    for (j, h) in header[2..].iter().enumerate() {
        let want = if j < k { format!("x_{}", j + 1) } else { format!("z_{}", j - k + 1) };
        if *h != want {
            return Err(Error::Parse(format!("unexpected column `{h}`, expected `{want}`")));
        }
    }
    let mut s = Vec::new();
    let mut price = Vec::new();
    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        if rec.len() != 2 + k + m {
            return Err(Error::Parse(format!("line {line}: expected {} fields", 2 + k + m)));
        }
        s.push(match rec[0].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("line {line}: choice must be 0 or 1, got `{other}`"))),
        });
        price.push(parse_real::<T>(&rec[1], line)?);
        for j in 0..k {
            xs.push(parse_real::<T>(&rec[2 + j], line)?);
        }
        for j in 0..m {
            zs.push(parse_real::<T>(&rec[2 + k + j], line)?);
        }
    }
    let n = s.len();
    let data = Dataset::new(
        s,
        DVector::from_vec(price),
        DMatrix::from_row_slice(n, k, &xs),
        DMatrix::from_row_slice(n, m, &zs),
    )?;
    let hp = hidden_path(path);
    let hidden = if hp.exists() {
        let mut r = csv::Reader::from_path(&hp)?;
        let mut cols: [Vec<T>; 4] = Default::default();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Parse(format!("{}: line {}: expected 4 fields", hp.display(), line + 2)));
            }
            for (c, col) in cols.iter_mut().enumerate() {
                col.push(parse_real::<T>(&rec[c], line + 2)?);
            }
        }
        let [u, nu, eps, pi] = cols;
        Some(HiddenLatent {
            u: DVector::from_vec(u),
            nu: DVector::from_vec(nu),
            eps: DVector::from_vec(eps),
            pi: DVector::from_vec(pi),
        })
    } else {
        None
    };
    Sample::new(data, hidden)
}
