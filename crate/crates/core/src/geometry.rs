//! Network topology and average channel gains.
//!
//! Every BS serves one user drawn uniformly from a disk around the BS.
//! With Rayleigh fading `g = |h|^2 d^-alpha`, the average gain between a
//! transmitter and the user of another BS factors as
//! `E[h^2] * E[d^-alpha]`, where `d` runs over the user disk. For
//! `alpha = 4` the disk expectation has a closed form: a transmitter at
//! distance `R` from the disk centre sees `1/(R^2 - r^2)^2`, and a BS
//! serving its own disk (`R = 0`, users at least 1 m away) sees
//! `(1 - r^-2)/r^2`. Other exponents are integrated numerically.
//!
//! Note that for a transmitter strictly inside another user's disk
//! (`0 < R < r`) the defining integral diverges for `alpha > 2`; the
//! closed form above is the analytic extension and is the value used for
//! such pairs (this is exactly the situation of an SBS interfering with
//! the macro user, whose disk spans the whole cell).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum layout redraw rounds before `generate_topology` gives up.
const MAX_REJECTION_ROUNDS: usize = 10_000;

/// Minimum clearance between any two BSs beyond the user-disk radius, in
/// metres. Keeps every cross pair strictly away from the divergent
/// `R = r` circle.
const PAIR_CLEARANCE: f64 = 1.0;

/// Base-station layout of one macrocell.
///
/// Index 0 is the MBS; SBSs are 1..=M. The MBS user is uniform in the
/// macro disk, each SBS user is uniform in that SBS's coverage disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub mbs_position: [f64; 2],
    pub sbs_positions: Vec<[f64; 2]>,
    /// Macro disk radius in metres (also the MBS user's disk).
    pub macro_radius: f64,
    /// User disk radius of every SBS, metres.
    pub sbs_coverage_radius: f64,
    /// Path-loss exponent, must exceed 2.
    pub pathloss_exponent: f64,
    /// Mean square fading gain E[h^2].
    pub rayleigh_mean_sq: f64,
}

impl Topology {
    /// Number of base stations including the MBS.
    pub fn num_bs(&self) -> usize {
        self.sbs_positions.len() + 1
    }

    /// Number of SBSs.
    pub fn num_sbs(&self) -> usize {
        self.sbs_positions.len()
    }

    /// Position of BS `i` (0 = MBS).
    pub fn bs_position(&self, i: usize) -> [f64; 2] {
        if i == 0 {
            self.mbs_position
        } else {
            self.sbs_positions[i - 1]
        }
    }

    /// User-disk radius of BS `i` (0 = MBS).
    pub fn user_disk_radius(&self, i: usize) -> f64 {
        if i == 0 {
            self.macro_radius
        } else {
            self.sbs_coverage_radius
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.pathloss_exponent <= 2.0 {
            return Err(Error::config(
                "topology.pathloss_exponent",
                "must be > 2",
            ));
        }
        if self.sbs_coverage_radius < 1.0 {
            return Err(Error::config(
                "topology.coverage_radius",
                "must be >= 1 (required by the co-located gain formula)",
            ));
        }
        if self.macro_radius < 1.0 {
            return Err(Error::config(
                "topology.macro_radius",
                "must be >= 1 (required by the co-located gain formula)",
            ));
        }
        if self.rayleigh_mean_sq <= 0.0 {
            return Err(Error::config(
                "topology.rayleigh_mean_sq",
                "must be > 0",
            ));
        }
        for (k, p) in self.sbs_positions.iter().enumerate() {
            if distance(*p, self.mbs_position) > self.macro_radius {
                return Err(Error::config(
                    "topology.sbs_positions",
                    format!("SBS {} lies outside the macro radius", k + 1),
                ));
            }
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Average channel gains for every ordered BS pair.
///
/// `g_bar(i, j)` is the mean gain from transmitter `j` to the user served
/// by BS `i`; `g_bar(i, i)` is the own-cell gain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainTable {
    g: Vec<Vec<f64>>,
}

impl GainTable {
    /// Builds a table from raw entries (row `i` = receiver owner).
    pub fn from_rows(g: Vec<Vec<f64>>) -> Result<Self> {
        let n = g.len();
        for row in &g {
            if row.len() != n {
                return Err(Error::config("gains", "gain matrix must be square"));
            }
            for &v in row {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(
                        "gains",
                        "all entries must be strictly positive and finite",
                    ));
                }
            }
        }
        Ok(Self { g })
    }

    pub fn num_bs(&self) -> usize {
        self.g.len()
    }

    pub fn num_sbs(&self) -> usize {
        self.g.len() - 1
    }

    /// Mean gain from transmitter `j` to the user of BS `i`.
    pub fn g_bar(&self, i: usize, j: usize) -> f64 {
        self.g[i][j]
    }
}

/// Closed-form E[d^-4] for a user uniform in a disk of radius `r` whose
/// centre is `R` away from the transmitter.
///
/// `R = 0` is the own-cell case and needs `r >= 1`; `R = r` is rejected.
/// For `0 < R < r` the same closed form is returned (analytic extension,
/// see the module docs).
pub fn expected_inv_d4(center_distance: f64, disk_radius: f64) -> Result<f64> {
    let (big_r, r) = (center_distance, disk_radius);
    if !(r > 0.0) || big_r < 0.0 || !big_r.is_finite() || !r.is_finite() {
        return Err(Error::config(
            "geometry",
            "distances must be finite and the disk radius positive",
        ));
    }
    if big_r == r {
        return Err(Error::DegenerateGeometry {
            center_distance: big_r,
            disk_radius: r,
        });
    }
    if big_r == 0.0 {
        if r < 1.0 {
            return Err(Error::CoLocatedDiskTooSmall { disk_radius: r });
        }
        let r2 = r * r;
        return Ok((1.0 - 1.0 / r2) / r2);
    }
    let diff = big_r * big_r - r * r;
    Ok(1.0 / (diff * diff))
}

/// Numerical E[d^-alpha] over the same geometry, `alpha > 2`.
///
/// Integrates `(R^2 + a^2 - 2 a R cos t)^(-alpha/2)` against the radial
/// density `2a/r^2` and uniform angle. The co-located case integrates
/// users from 1 m outward, matching the closed form at `alpha = 4`.
/// For a transmitter strictly inside the disk the integral diverges and
/// an error is returned; use [`expected_inv_d4`]'s extension instead.
pub fn expected_inv_d_alpha(center_distance: f64, disk_radius: f64, alpha: f64) -> Result<f64> {
    let (big_r, r) = (center_distance, disk_radius);
    if alpha <= 2.0 {
        return Err(Error::config("geometry.alpha", "must be > 2"));
    }
    if big_r == r {
        return Err(Error::DegenerateGeometry {
            center_distance: big_r,
            disk_radius: r,
        });
    }
    if big_r == 0.0 {
        if r < 1.0 {
            return Err(Error::CoLocatedDiskTooSmall { disk_radius: r });
        }
        // d = a,ph density 2a/r^2 on [1, r]: (2/(r^2 (alpha-2))) (1 - r^(2-alpha)).
        let r2 = r * r;
        return Ok(2.0 / (r2 * (alpha - 2.0)) * (1.0 - r.powf(2.0 - alpha)));
    }
    if big_r < r {
        return Err(Error::DivergentExpectation {
            center_distance: big_r,
            disk_radius: r,
            alpha,
        });
    }

    // Angular mean at user radius a, by symmetry over [0, pi].
    let angular = |a: f64| -> f64 {
        let f = |theta: f64| {
            let d2 = big_r * big_r + a * a - 2.0 * a * big_r * theta.cos();
            d2.powf(-alpha / 2.0)
        };
        adaptive_simpson(&f, 0.0, std::f64::consts::PI, 1e-13, 48).0 / std::f64::consts::PI
    };
    let outer = |a: f64| angular(a) * 2.0 * a / (r * r);
    let (value, err) = adaptive_simpson(&outer, 0.0, r, 1e-11, 48);
    let tol = 1e-10 + 1e-9 * value.abs();
    if !value.is_finite() || err > tol {
        return Err(Error::QuadratureNotConverged { residual: err });
    }
    Ok(value)
}

/// Adaptive Simpson quadrature; returns `(integral, error_estimate)`.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> (f64, f64) {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return (left + right + delta / 15.0, delta.abs() / 15.0);
        }
        let (lv, le) = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
        let (rv, re) = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
        (lv + rv, le + re)
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

/// Average-gain table for every ordered pair in `topology`.
///
/// Uses the closed form when `alpha = 4` and quadrature otherwise.
/// Pairs that violate the geometric preconditions surface the offending
/// `(receiver owner, transmitter)` indices.
pub fn build_gain_table(topology: &Topology) -> Result<GainTable> {
    topology.validate()?;
    let n = topology.num_bs();
    let alpha = topology.pathloss_exponent;
    let lambda = topology.rayleigh_mean_sq;
    let exact4 = (alpha - 4.0).abs() < 1e-12;
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let disk = topology.user_disk_radius(i);
        for j in 0..n {
            let center_distance = if i == j {
                0.0
            } else {
                distance(topology.bs_position(i), topology.bs_position(j))
            };
            let e = if exact4 {
                expected_inv_d4(center_distance, disk)
            } else {
                expected_inv_d_alpha(center_distance, disk, alpha)
            };
            match e {
                Ok(v) => g[i][j] = lambda * v,
                Err(source) => {
                    return Err(Error::GainPrecondition {
                        rx_owner: i,
                        tx: j,
                        source: Box::new(source),
                    })
                }
            }
        }
    }
    GainTable::from_rows(g)
}

/// Samples a point uniformly inside the disk of radius `r` around `c`.
pub(crate) fn sample_in_disk<R: Rng>(rng: &mut R, c: [f64; 2], r: f64) -> [f64; 2] {
    let rad = r * rng.gen::<f64>().sqrt();
    let ang = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    [c[0] + rad * ang.cos(), c[1] + rad * ang.sin()]
}

/// Draws `num_sbs` SBS positions uniformly in the macro disk, redrawing
/// any position whose distance to an already placed BS (or the MBS) is
/// within the coverage radius plus a 1 m clearance. Deterministic for a
/// given seed.
pub fn generate_topology(
    num_sbs: usize,
    macro_radius: f64,
    coverage_radius: f64,
    seed: u64,
) -> Result<Topology> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mbs = [0.0, 0.0];
    let min_sep = coverage_radius + PAIR_CLEARANCE;
    let mut sbs: Vec<[f64; 2]> = Vec::with_capacity(num_sbs);
    for _ in 0..num_sbs {
        let mut attempts = 0;
        loop {
            if attempts >= MAX_REJECTION_ROUNDS {
                return Err(Error::TopologyRejection { attempts });
            }
            attempts += 1;
            let cand = sample_in_disk(&mut rng, mbs, macro_radius);
            let clear = distance(cand, mbs) > min_sep
                && sbs.iter().all(|p| distance(*p, cand) > min_sep);
            if clear {
                sbs.push(cand);
                break;
            }
        }
    }
    let topology = Topology {
        mbs_position: mbs,
        sbs_positions: sbs,
        macro_radius,
        sbs_coverage_radius: coverage_radius,
        pathloss_exponent: 4.0,
        rayleigh_mean_sq: 1.0,
    };
    topology.validate()?;
    Ok(topology)
}
