//! Synthetic sparse-regression problems and data-quality diagnostics.
//!
//! An instance is `y = X β* + ξ` with standard-Gaussian design rows and
//! Gaussian label noise; the ground truth `β*` is `s`-sparse with its support
//! on the first `s` coordinates. The diagnostics report the regularity
//! quantities the dynamics analysis conditions on (noise norms, Gram-spectrum
//! spread) plus an estimated restricted-isometry constant.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg;
use crate::rng::{splitmix64, SeededRng};
use crate::Float;

/// Most supports an exhaustive RIP scan may visit.
pub const EXHAUSTIVE_SUPPORT_CAP: u128 = 1_000_000;

/// Magic string heading every serialized instance file.
pub const INSTANCE_MAGIC: &str = "SIL1";

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("sparsity s={s} exceeds dimension d={d}")]
    SparsityExceedsDimension { s: usize, d: usize },
    #[error("the three-spike target needs s=3 and d>=3, got s={s}, d={d}")]
    BadThreeSpike { s: usize, d: usize },
    #[error("explicit target invalid: {0}")]
    BadExplicitTarget(String),
    #[error("dimensions must be positive: n={n}, d={d}")]
    EmptyDimensions { n: usize, d: usize },
    #[error("noise level must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("RIP order k={k} must satisfy 1 <= k <= d={d}")]
    BadRipOrder { k: usize, d: usize },
    #[error("exhaustive RIP scan over {supports} supports exceeds the cap of {cap}")]
    RipOverCap { supports: u128, cap: u128 },
    #[error("instance file is not in SIL1 format: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the ground-truth coefficient vector is chosen.
#[derive(Debug, Clone)]
pub enum BetaSpec<F: Float> {
    /// `β* = (1/√3, −1/√3, 1/√3, 0, …)`, the three-spike target used in the
    /// dynamics and scaling experiments.
    ThreeSpike,
    /// Caller-provided target; must carry exactly `s` nonzeros, all on the
    /// first `s` coordinates.
    ExplicitVector(Array1<F>),
}

/// A synthetic sparse-regression problem. Immutable after construction:
/// `y = X β* + ξ` holds bit-exactly by construction and every consumer
/// relies on it.
#[derive(Debug, Clone)]
pub struct RegressionInstance<F: Float> {
    pub x: Array2<F>,
    pub y: Array1<F>,
    pub beta_star: Array1<F>,
    pub xi: Array1<F>,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub sigma: F,
    pub seed: u64,
    support_pos: Vec<usize>,
    support_neg: Vec<usize>,
}

impl<F: Float> RegressionInstance<F> {
    /// Builds an instance from explicit parts, recomputing `y = X β* + ξ`.
    /// This is also the injection point for hand-crafted test designs.
    pub fn from_parts(
        x: Array2<F>,
        beta_star: Array1<F>,
        xi: Array1<F>,
        sigma: F,
        seed: u64,
    ) -> Result<Self, InstanceError> {
        let (n, d) = (x.nrows(), x.ncols());
        if n == 0 || d == 0 {
            return Err(InstanceError::EmptyDimensions { n, d });
        }
        if beta_star.len() != d {
            return Err(InstanceError::BadExplicitTarget(format!(
                "target length {} != d={d}",
                beta_star.len()
            )));
        }
        if xi.len() != n {
            return Err(InstanceError::BadExplicitTarget(format!(
                "noise length {} != n={n}",
                xi.len()
            )));
        }
        if sigma < F::zero() {
            return Err(InstanceError::NegativeSigma(
                sigma.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let s = leading_support_len(&beta_star)?;
        let mut y = linalg::mat_vec(x.view(), beta_star.view());
        y += &xi;
        let support_pos = (0..s).filter(|&k| beta_star[k] > F::zero()).collect();
        let support_neg = (0..s).filter(|&k| beta_star[k] < F::zero()).collect();
        Ok(RegressionInstance {
            x,
            y,
            beta_star,
            xi,
            n,
            d,
            s,
            sigma,
            seed,
            support_pos,
            support_neg,
        })
    }

    /// Signal coordinates `S = {0, …, s−1}`.
    pub fn support(&self) -> std::ops::Range<usize> {
        0..self.s
    }

    /// Coordinates with positive target entries.
    pub fn support_pos(&self) -> &[usize] {
        &self.support_pos
    }

    /// Coordinates with negative target entries.
    pub fn support_neg(&self) -> &[usize] {
        &self.support_neg
    }
}

fn leading_support_len<F: Float>(beta: &Array1<F>) -> Result<usize, InstanceError> {
    let s = beta.iter().take_while(|&&b| b != F::zero()).count();
    if beta.iter().skip(s).any(|&b| b != F::zero()) {
        return Err(InstanceError::BadExplicitTarget(
            "nonzero entries must occupy a contiguous prefix".into(),
        ));
    }
    Ok(s)
}

/// Generates a fresh instance. Deterministic: the same arguments always yield
/// a bit-identical instance. The design matrix is filled row-major first, the
/// noise vector second, from one seeded stream.
pub fn generate_instance<F: Float>(
    n: usize,
    d: usize,
    s: usize,
    sigma: F,
    beta_spec: &BetaSpec<F>,
    seed: u64,
) -> Result<RegressionInstance<F>, InstanceError> {
    if n == 0 || d == 0 {
        return Err(InstanceError::EmptyDimensions { n, d });
    }
    if s > d {
        return Err(InstanceError::SparsityExceedsDimension { s, d });
    }
    if sigma < F::zero() {
        return Err(InstanceError::NegativeSigma(
            sigma.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let beta_star = match beta_spec {
        BetaSpec::ThreeSpike => {
            if s != 3 || d < 3 {
                return Err(InstanceError::BadThreeSpike { s, d });
            }
            let spike = F::one() / F::cast(3.0).sqrt();
            let mut b = Array1::zeros(d);
            b[0] = spike;
            b[1] = -spike;
            b[2] = spike;
            b
        }
        BetaSpec::ExplicitVector(v) => {
            if v.len() != d {
                return Err(InstanceError::BadExplicitTarget(format!(
                    "target length {} != d={d}",
                    v.len()
                )));
            }
            let got = leading_support_len(v)?;
            if got != s {
                return Err(InstanceError::BadExplicitTarget(format!(
                    "target has {got} leading nonzeros but s={s}"
                )));
            }
            v.clone()
        }
    };
    let mut rng = SeededRng::new(seed);
    let mut x = Array2::zeros((n, d));
    rng.fill_normal(
        x.as_slice_mut().expect("fresh matrix is contiguous"),
        F::one(),
    );
    let mut xi = Array1::zeros(n);
    rng.fill_normal(
        xi.as_slice_mut().expect("fresh vector is contiguous"),
        sigma,
    );
    RegressionInstance::from_parts(x, beta_star, xi, sigma, seed)
}

/// Normalized versions of the regularity quantities against their expected
/// scalings. When `sigma == 0` the noise ratios are reported as `+∞` rather
/// than dividing by zero.
#[derive(Debug, Clone, Copy)]
pub struct AssumptionRatios<F: Float> {
    /// `‖ξ‖₂ / (σ√n)`
    pub xi_norm: F,
    /// `‖Xᵀξ/n‖_∞ / (σ√(ln d / n))`
    pub b_xi: F,
    /// `‖Xᵀξ‖₂ / (σ√(dn))`
    pub xtxi_norm: F,
    /// `(1 − λ_min(XXᵀ)/d) / √(n/d)` — the implied constant of the lower
    /// spectral bound; can be negative when the spectrum sits above `d`.
    pub gram_lambda_min: F,
    /// `(λ_max(XXᵀ)/d − 1) / √(n/d)`
    pub gram_lambda_max: F,
}

/// The five regularity quantities plus an optional RIP-constant estimate.
/// Purely diagnostic: nothing here gates a run.
#[derive(Debug, Clone)]
pub struct AssumptionReport<F: Float> {
    /// `‖ξ‖₂`
    pub xi_norm: F,
    /// `B_ξ = ‖Xᵀξ/n‖_∞`
    pub b_xi: F,
    /// `‖Xᵀξ‖₂`
    pub xtxi_norm: F,
    pub gram_lambda_min: F,
    pub gram_lambda_max: F,
    pub rip_delta: Option<F>,
    pub rip_k: usize,
    pub ratios: AssumptionRatios<F>,
}

/// Computes the regularity quantities exactly (eigenvalues come from a
/// symmetric eigensolve of the n×n Gram matrix `XXᵀ`; the d×d matrix is never
/// formed). `rip_budget` is the number of supports the RIP estimate may
/// visit: `0` skips estimation, a budget covering all `C(d,k)` supports runs
/// the exhaustive scan, anything else falls back to Monte-Carlo sampling of
/// `rip_budget` supports.
pub fn regularity_report<F: Float>(
    inst: &RegressionInstance<F>,
    rip_k: usize,
    rip_budget: usize,
) -> Result<AssumptionReport<F>, InstanceError> {
    if rip_k < 1 || rip_k > inst.d {
        return Err(InstanceError::BadRipOrder {
            k: rip_k,
            d: inst.d,
        });
    }
    let n_f = F::of_usize(inst.n);
    let d_f = F::of_usize(inst.d);
    let xi_norm = linalg::l2_norm(inst.xi.view());
    let xtxi = linalg::mat_t_vec(inst.x.view(), inst.xi.view());
    let b_xi = linalg::inf_norm(xtxi.view()) / n_f;
    let xtxi_norm = linalg::l2_norm(xtxi.view());
    let eig = linalg::symmetric_eigenvalues(linalg::gram(inst.x.view()).view());
    // Jacobi can return a tiny negative value for a numerically singular
    // Gram; the spectrum of X X^T is nonnegative by construction.
    let gram_lambda_min = eig[0].max(F::zero());
    let gram_lambda_max = eig[eig.len() - 1];

    let rip_delta = if rip_budget == 0 {
        None
    } else {
        let total = binomial(inst.d, rip_k);
        let mode = if total <= rip_budget as u128 && total <= EXHAUSTIVE_SUPPORT_CAP {
            RipMode::Exhaustive
        } else {
            RipMode::MonteCarlo {
                num_supports: rip_budget,
            }
        };
        Some(estimate_rip_delta(
            inst.x.view(),
            rip_k,
            mode,
            splitmix64(inst.seed ^ 0x5249_5031), // "RIP1"
        )?)
    };

    let inf = F::infinity();
    let sigma = inst.sigma;
    let ln_d = d_f.ln();
    let sqrt_n_over_d = (n_f / d_f).sqrt();
    let ratios = AssumptionRatios {
        xi_norm: if sigma == F::zero() {
            inf
        } else {
            xi_norm / (sigma * n_f.sqrt())
        },
        b_xi: if sigma == F::zero() {
            inf
        } else {
            b_xi / (sigma * (ln_d / n_f).sqrt())
        },
        xtxi_norm: if sigma == F::zero() {
            inf
        } else {
            xtxi_norm / (sigma * (d_f * n_f).sqrt())
        },
        gram_lambda_min: (F::one() - gram_lambda_min / d_f) / sqrt_n_over_d,
        gram_lambda_max: (gram_lambda_max / d_f - F::one()) / sqrt_n_over_d,
    };

    Ok(AssumptionReport {
        xi_norm,
        b_xi,
        xtxi_norm,
        gram_lambda_min,
        gram_lambda_max,
        rip_delta,
        rip_k,
        ratios,
    })
}

/// Strategy for visiting size-`k` column supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RipMode {
    /// Visit every support; the result is the exact RIP constant.
    Exhaustive,
    /// Visit `num_supports` uniform random supports; the result is a lower
    /// bound on the true constant.
    MonteCarlo { num_supports: usize },
}

/// Estimated `(k, δ)`-RIP constant of `X/√n`:
/// `δ̂ = max_T max(|λ_max(G_T) − 1|, |λ_min(G_T) − 1|)` over visited supports
/// `T`, where `G_T = X_Tᵀ X_T / n`. Eigenvalues of the tiny k×k Gram stand in
/// for squared singular values of the column submatrix. Exhaustive scans are
/// limited to [`EXHAUSTIVE_SUPPORT_CAP`] supports; see
/// [`estimate_rip_delta_with_cap`] to override.
pub fn estimate_rip_delta<F: Float>(
    x: ArrayView2<F>,
    k: usize,
    mode: RipMode,
    seed: u64,
) -> Result<F, InstanceError> {
    estimate_rip_delta_with_cap(x, k, mode, seed, EXHAUSTIVE_SUPPORT_CAP)
}

/// [`estimate_rip_delta`] with an explicit exhaustive-scan cap.
pub fn estimate_rip_delta_with_cap<F: Float>(
    x: ArrayView2<F>,
    k: usize,
    mode: RipMode,
    seed: u64,
    cap: u128,
) -> Result<F, InstanceError> {
    let d = x.ncols();
    if k < 1 || k > d {
        return Err(InstanceError::BadRipOrder { k, d });
    }
    let supports: Vec<Vec<usize>> = match mode {
        RipMode::Exhaustive => {
            let total = binomial(d, k);
            if total > cap {
                return Err(InstanceError::RipOverCap {
                    supports: total,
                    cap,
                });
            }
            Combinations::new(d, k).collect()
        }
        RipMode::MonteCarlo { num_supports } => {
            let mut rng = SeededRng::new(seed);
            (0..num_supports)
                .map(|_| sample_support(&mut rng, d, k))
                .collect()
        }
    };
    // Supports are fixed up front, so a max-reduction over them is
    // deterministic regardless of how rayon partitions the work.
    let delta = supports
        .par_iter()
        .map(|t| support_delta(x, t))
        .reduce(F::zero, |a, b| a.max(b));
    Ok(delta)
}

fn support_delta<F: Float>(x: ArrayView2<F>, support: &[usize]) -> F {
    let k = support.len();
    let n_f = F::of_usize(x.nrows());
    let mut g = Array2::zeros((k, k));
    for (a, &ja) in support.iter().enumerate() {
        let col_a = x.column(ja);
        for (b, &jb) in support.iter().enumerate().skip(a) {
            let v = col_a.dot(&x.column(jb)) / n_f;
            g[[a, b]] = v;
            g[[b, a]] = v;
        }
    }
    let eig = linalg::symmetric_eigenvalues(g.view());
    let lo = (eig[0] - F::one()).abs();
    let hi = (eig[k - 1] - F::one()).abs();
    lo.max(hi)
}

fn sample_support(rng: &mut SeededRng, d: usize, k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    while picked.len() < k {
        let j = rng.below(d);
        if !picked.contains(&j) {
            picked.push(j);
        }
    }
    picked.sort_unstable();
    picked
}

/// `C(d, k)` saturating at `u128::MAX`.
pub fn binomial(d: usize, k: usize) -> u128 {
    if k > d {
        return 0;
    }
    let k = k.min(d - k);
    let mut num: u128 = 1;
    for i in 0..k {
        num = match num.checked_mul((d - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    num
}

/// Lexicographic size-`k` subsets of `{0, …, d−1}`.
struct Combinations {
    d: usize,
    k: usize,
    current: Vec<usize>,
    started: bool,
}

impl Combinations {
    fn new(d: usize, k: usize) -> Self {
        Combinations {
            d,
            k,
            current: (0..k).collect(),
            started: false,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.k > self.d {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.current.clone());
        }
        let mut i = self.k;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if self.current[i] != i + self.d - self.k {
                break;
            }
        }
        self.current[i] += 1;
        for j in (i + 1)..self.k {
            self.current[j] = self.current[j - 1] + 1;
        }
        Some(self.current.clone())
    }
}

// --- SIL1 serialization -----------------------------------------------------
//
// Text layout, one logical record per line:
//   SIL1
//   n,d,s,sigma,seed
//   <n>,<d>,<s>,<sigma>,<seed>
//   beta_star,<d values>
//   xi,<n values>
//   x,<d values>        (n rows, row-major)
// Floats carry 17 significant digits so an f64 round-trips bit-exactly; `y`
// is rebuilt from the parts on read.

/// Writes an instance in the SIL1 text format.
pub fn write_instance<F: Float, W: Write>(
    inst: &RegressionInstance<F>,
    mut out: W,
) -> io::Result<()> {
    let mut buf = String::new();
    writeln!(buf, "{INSTANCE_MAGIC}").unwrap();
    writeln!(buf, "n,d,s,sigma,seed").unwrap();
    writeln!(
        buf,
        "{},{},{},{:.16e},{}",
        inst.n, inst.d, inst.s, inst.sigma, inst.seed
    )
    .unwrap();
    write_row(&mut buf, "beta_star", inst.beta_star.iter());
    write_row(&mut buf, "xi", inst.xi.iter());
    for row in inst.x.rows() {
        write_row(&mut buf, "x", row.iter());
    }
    out.write_all(buf.as_bytes())
}

fn write_row<'a, F: Float + 'a>(buf: &mut String, tag: &str, values: impl Iterator<Item = &'a F>) {
    buf.push_str(tag);
    for v in values {
        write!(buf, ",{:.16e}", v).unwrap();
    }
    buf.push('\n');
}

/// Writes an instance to a file path.
pub fn save_instance<F: Float>(
    inst: &RegressionInstance<F>,
    path: &Path,
) -> Result<(), InstanceError> {
    let file = fs::File::create(path)?;
    write_instance(inst, io::BufWriter::new(file))?;
    Ok(())
}

/// Reads a SIL1 instance, rebuilding `y = X β* + ξ` from the stored parts.
pub fn read_instance<F: Float, R: Read>(input: R) -> Result<RegressionInstance<F>, InstanceError> {
    let mut lines = BufReader::new(input).lines();
    let magic = next_line(&mut lines)?;
    if magic.trim() != INSTANCE_MAGIC {
        return Err(InstanceError::BadFormat(format!(
            "expected magic {INSTANCE_MAGIC:?}, found {magic:?}"
        )));
    }
    let _names = next_line(&mut lines)?;
    let header = next_line(&mut lines)?;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    if fields.len() != 5 {
        return Err(InstanceError::BadFormat(format!(
            "header row has {} fields, expected 5",
            fields.len()
        )));
    }
    let n: usize = parse_field(fields[0], "n")?;
    let d: usize = parse_field(fields[1], "d")?;
    let s: usize = parse_field(fields[2], "s")?;
    let sigma: f64 = parse_field(fields[3], "sigma")?;
    let seed: u64 = parse_field(fields[4], "seed")?;

    let beta_star = parse_row::<F>(&next_line(&mut lines)?, "beta_star", d)?;
    let xi = parse_row::<F>(&next_line(&mut lines)?, "xi", n)?;
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let row = parse_row::<F>(&next_line(&mut lines)?, "x", d)?;
        x.row_mut(i).assign(&row);
    }
    let inst = RegressionInstance::from_parts(x, beta_star, xi, F::cast(sigma), seed)
        .map_err(|e| InstanceError::BadFormat(e.to_string()))?;
    if inst.s != s {
        return Err(InstanceError::BadFormat(format!(
            "stored s={s} disagrees with target support {}",
            inst.s
        )));
    }
    Ok(inst)
}

/// Reads a SIL1 instance from a file path.
pub fn load_instance<F: Float>(path: &Path) -> Result<RegressionInstance<F>, InstanceError> {
    read_instance(fs::File::open(path)?)
}

fn next_line(
    lines: &mut impl Iterator<Item = io::Result<String>>,
) -> Result<String, InstanceError> {
    match lines.next() {
        Some(line) => Ok(line?),
        None => Err(InstanceError::BadFormat("unexpected end of file".into())),
    }
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str) -> Result<T, InstanceError> {
    raw.trim()
        .parse()
        .map_err(|_| InstanceError::BadFormat(format!("cannot parse {name} from {raw:?}")))
}

fn parse_row<F: Float>(line: &str, tag: &str, len: usize) -> Result<Array1<F>, InstanceError> {
    let mut parts = line.trim_end().split(',');
    let got_tag = parts.next().unwrap_or("");
    if got_tag != tag {
        return Err(InstanceError::BadFormat(format!(
            "expected row tag {tag:?}, found {got_tag:?}"
        )));
    }
    let values: Result<Vec<F>, InstanceError> = parts
        .map(|p| parse_field::<f64>(p, tag).map(F::cast))
        .collect();
    let values = values?;
    if values.len() != len {
        return Err(InstanceError::BadFormat(format!(
            "row {tag:?} has {} values, expected {len}",
            values.len()
        )));
    }
    Ok(Array1::from_vec(values))
}
