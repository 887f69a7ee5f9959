//! Piecewise-linear interpolants of `log x` and `x²` written as sums of
//! scaled ReLUs, `f(x) = Σ_j a_j relu(w_j x + b_j)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// `log x` on `[1/A, A]`, constant `−log A` below `1/A`.
    Log,
    /// `x²` on `[−A, A]`.
    Square,
}

/// One term `a · relu(w x + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub a: f64,
    pub w: f64,
    pub b: f64,
}

impl Piece {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (self.w * x + self.b).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Grid {
    /// `n` geometric intervals between `1/A` and `A`; `step = ln(ratio)`.
    Log { n: usize, step: f64 },
    /// Uniform intervals on `[−A, 0]` and `[0, A]`.
    Square { left: usize, right: usize },
}

/// Interpolant on a fixed grid. Pieces are generated on demand, so budgets
/// with millions of terms cost nothing until they are enumerated.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluScalarApprox {
    target: Target,
    range: f64,
    delta: f64,
    grid: Grid,
}

/// Budget from the uniform-error argument: `⌈2 log A / δ⌉` log intervals or
/// `⌈2A² / δ⌉` square intervals, each giving one more piece than intervals.
pub fn build_relu_approx(target: Target, range: f64, delta: f64) -> crate::Result<ReluScalarApprox> {
    check(range, delta)?;
    let grid = match target {
        Target::Log => log_grid((2.0 * range.ln() / delta).ceil() as usize, range),
        Target::Square => {
            let n = (2.0 * range * range / delta).ceil() as usize;
            Grid::Square {
                left: n / 2,
                right: n - n / 2,
            }
        }
    };
    Ok(ReluScalarApprox {
        target,
        range,
        delta,
        grid,
    })
}

/// The coarsest grid of the same shape whose interpolation error is still at
/// most `delta`. Much smaller than [`build_relu_approx`] when `delta` is small.
pub fn build_relu_approx_tight(target: Target, range: f64, delta: f64) -> crate::Result<ReluScalarApprox> {
    check(range, delta)?;
    let grid = match target {
        Target::Log => {
            let u = log_step_for_error(delta);
            log_grid(((2.0 * range.ln() / u).ceil() as usize).max(1), range)
        }
        Target::Square => {
            // chord error of x² over width h is h²/4
            let per_side = ((range / (2.0 * delta.sqrt())).ceil() as usize).max(1);
            Grid::Square {
                left: per_side,
                right: per_side,
            }
        }
    };
    Ok(ReluScalarApprox {
        target,
        range,
        delta,
        grid,
    })
}

fn check(range: f64, delta: f64) -> crate::Result<()> {
    if !(range > 1.0 && range.is_finite()) {
        return Err(crate::Error::InvalidArgument("approximation range must exceed 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(crate::Error::InvalidArgument("delta must be positive".into()));
    }
    Ok(())
}

fn log_grid(n: usize, range: f64) -> Grid {
    Grid::Log {
        n,
        step: 2.0 * range.ln() / n as f64,
    }
}

/// Largest `u` such that the chord of `log` over `[x, e^u x]` deviates by at
/// most `delta`. The deviation is `s − 1 − ln s` with `s = u / (e^u − 1)`.
fn log_step_for_error(delta: f64) -> f64 {
    let err = |u: f64| {
        let s = u / u.exp_m1();
        s - 1.0 - s.ln()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while err(hi) < delta {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if err(mid) <= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Running sum with Neumaier compensation.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

impl ReluScalarApprox {
    pub fn target(&self) -> Target {
        self.target
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of interpolation intervals.
    pub fn intervals(&self) -> usize {
        match self.grid {
            Grid::Log { n, .. } => n,
            Grid::Square { left, right } => left + right,
        }
    }

    /// Number of ReLU terms, including the constant term.
    pub fn piece_count(&self) -> usize {
        self.intervals() + 1
    }

    fn log_node(&self, j: usize) -> f64 {
        let Grid::Log { step, .. } = self.grid else {
            unreachable!()
        };
        (-self.range.ln() + j as f64 * step).exp()
    }

    fn log_slope(&self, j: usize) -> f64 {
        let Grid::Log { step, .. } = self.grid else {
            unreachable!()
        };
        step / (self.log_node(j + 1) - self.log_node(j))
    }

    /// The `j`-th term. Index 0 is the constant; for `log` the remaining
    /// terms have increasing kinks, for `x²` the right-hand kinks come first
    /// (increasing) followed by the left-hand kinks (decreasing).
    pub fn piece(&self, j: usize) -> Piece {
        assert!(j < self.piece_count(), "piece index out of range");
        match self.grid {
            Grid::Log { .. } => match j {
                0 => Piece {
                    a: -self.range.ln(),
                    w: 0.0,
                    b: 1.0,
                },
                1 => Piece {
                    a: self.log_slope(0),
                    w: 1.0,
                    b: -self.log_node(0),
                },
                _ => Piece {
                    a: self.log_slope(j - 1) - self.log_slope(j - 2),
                    w: 1.0,
                    b: -self.log_node(j - 1),
                },
            },
            Grid::Square { left, right } => {
                if j == 0 {
                    return Piece {
                        a: 0.0,
                        w: 0.0,
                        b: 1.0,
                    };
                }
                let (i, count, w) = if j <= right {
                    (j - 1, right, 1.0)
                } else {
                    (j - 1 - right, left, -1.0)
                };
                let h = self.range / count as f64;
                Piece {
                    a: if i == 0 { h } else { 2.0 * h },
                    w,
                    b: -(i as f64) * h,
                }
            }
        }
    }

    pub fn pieces(&self) -> impl Iterator<Item = Piece> + '_ {
        (0..self.piece_count()).map(|j| self.piece(j))
    }

    /// The interpolant at `x`, by locating the interval directly.
    pub fn eval(&self, x: f64) -> f64 {
        match self.grid {
            Grid::Log { n, step } => {
                let ln_a = self.range.ln();
                let x0 = self.log_node(0);
                if x <= x0 {
                    return -ln_a;
                }
                let mut j = ((x.ln() + ln_a) / step).floor() as isize;
                j = j.clamp(0, n as isize - 1);
                let mut j = j as usize;
                // guard against the floor landing one interval off
                while j > 0 && x < self.log_node(j) {
                    j -= 1;
                }
                while j + 1 < n && x >= self.log_node(j + 1) {
                    j += 1;
                }
                -ln_a + j as f64 * step + self.log_slope(j) * (x - self.log_node(j))
            }
            Grid::Square { left, right } => {
                let (count, t) = if x >= 0.0 { (right, x) } else { (left, -x) };
                let h = self.range / count as f64;
                let j = ((t / h).floor() as usize).min(count - 1);
                let lo = j as f64 * h;
                let hi = lo + h;
                lo * lo + (lo + hi) * (t - lo)
            }
        }
    }

    /// `Σ_j a_j relu(w_j x + b_j)` term by term. `O(M)`.
    pub fn eval_relu_sum(&self, x: f64) -> f64 {
        let mut acc = Compensated::default();
        for p in self.pieces() {
            acc.add(p.eval(x));
        }
        acc.value()
    }

    /// The ReLU sum at every point of an ascending grid, in one sweep over
    /// the pieces. Agrees with [`Self::eval_relu_sum`] up to rounding.
    pub fn eval_sorted(&self, xs: &[f64]) -> Vec<f64> {
        assert!(xs.windows(2).all(|w| w[0] <= w[1]), "grid must be ascending");
        let mut constant = Compensated::default();
        let right_range;
        let left_range;
        match self.grid {
            Grid::Log { n, .. } => {
                right_range = 1..n + 1;
                left_range = 0..0;
            }
            Grid::Square { left, right: r } => {
                right_range = 1..r + 1;
                left_range = r + 1..r + left + 1;
            }
        }
        let p0 = self.piece(0);
        constant.add(p0.a * p0.b.max(0.0));
        let mut out = vec![constant.value(); xs.len()];

        // kinks at x = −b/w with w > 0, visited in increasing order
        let mut slope = Compensated::default();
        let mut offset = Compensated::default();
        let mut next = right_range.start;
        for (i, &x) in xs.iter().enumerate() {
            while next < right_range.end {
                let p = self.piece(next);
                if x > -p.b / p.w {
                    slope.add(p.a * p.w);
                    offset.add(p.a * p.b);
                    next += 1;
                } else {
                    break;
                }
            }
            out[i] += slope.value() * x + offset.value();
        }

        // kinks with w < 0, visited with decreasing x
        let mut slope = Compensated::default();
        let mut offset = Compensated::default();
        let mut next = left_range.start;
        for (i, &x) in xs.iter().enumerate().rev() {
            while next < left_range.end {
                let p = self.piece(next);
                if x < -p.b / p.w {
                    slope.add(p.a * p.w);
                    offset.add(p.a * p.b);
                    next += 1;
                } else {
                    break;
                }
            }
            out[i] += slope.value() * x + offset.value();
        }
        out
    }

    /// `(max |a_j|, max |w_j|, max |b_j|)` over all pieces.
    pub fn weight_bounds(&self) -> (f64, f64, f64) {
        self.pieces().fold((0.0f64, 0.0f64, 0.0f64), |(a, w, b), p| {
            (a.max(p.a.abs()), w.max(p.w.abs()), b.max(p.b.abs()))
        })
    }

    /// The function being approximated.
    pub fn exact(&self, x: f64) -> f64 {
        match self.target {
            Target::Log => x.ln(),
            Target::Square => x * x,
        }
    }

    /// The interval on which the error guarantee holds.
    pub fn domain(&self) -> (f64, f64) {
        match self.target {
            Target::Log => (1.0 / self.range, self.range),
            Target::Square => (-self.range, self.range),
        }
    }
}
