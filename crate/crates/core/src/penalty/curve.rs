use super::PenaltyModel;

/// Penalty as a function of age (in slots) at one fixed volume.
///
/// Before clamping the penalty is piecewise: linear inside the compensation
/// window, `c - a * exp(-k * x)` after it. Both pieces are non-decreasing, so
/// clamping to `[0, rho_max]` only cuts each piece at two crossing points and
/// every integral stays analytic.
#[derive(Clone, Copy, Debug)]
pub struct PenaltyCurve {
    rho_max: f64,
    window: Option<Linear>,
    tail: Rising,
    /// End of the compensation window in slots (0 when disabled).
    window_end: f64,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    v0: f64,
    slope: f64,
}

/// `c - a * exp(-k * x)`, with `a >= 0`, `k >= 0`.
#[derive(Clone, Copy, Debug)]
struct Rising {
    c: f64,
    a: f64,
    k: f64,
}

trait Piece {
    fn value(&self, x: f64) -> f64;
    fn antiderivative(&self, x: f64) -> f64;
    /// Smallest `x` with `value(x) >= y`; `-inf`/`+inf` when never/always.
    fn first_reach(&self, y: f64) -> f64;
}

impl Piece for Linear {
    fn value(&self, x: f64) -> f64 {
        self.v0 + self.slope * x
    }

    fn antiderivative(&self, x: f64) -> f64 {
        self.v0 * x + 0.5 * self.slope * x * x
    }

    fn first_reach(&self, y: f64) -> f64 {
        if self.slope > 0.0 {
            (y - self.v0) / self.slope
        } else if self.v0 >= y {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    }
}

impl Piece for Rising {
    fn value(&self, x: f64) -> f64 {
        self.c - self.a * (-self.k * x).exp()
    }

    fn antiderivative(&self, x: f64) -> f64 {
        if self.k > 0.0 {
            self.c * x + self.a / self.k * (-self.k * x).exp()
        } else {
            (self.c - self.a) * x
        }
    }

    fn first_reach(&self, y: f64) -> f64 {
        if self.a <= 0.0 || self.k <= 0.0 {
            return if self.value(0.0) >= y {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            };
        }
        let ratio = (self.c - y) / self.a;
        if ratio <= 0.0 {
            f64::INFINITY
        } else {
            -ratio.ln() / self.k
        }
    }
}

/// Integral of `clamp(piece, 0, cap)` over `[lo, hi]` for a non-decreasing piece.
fn clamped_integral<P: Piece>(piece: &P, lo: f64, hi: f64, cap: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let start = piece.first_reach(0.0).clamp(lo, hi);
    let sat = piece.first_reach(cap).clamp(start, hi);
    let middle = piece.antiderivative(sat) - piece.antiderivative(start);
    middle + cap * (hi - sat)
}

impl PenaltyCurve {
    pub(super) fn new(model: &PenaltyModel, b_log: f64) -> Self {
        let (amp, rate, floor) = model.surface.age_profile(b_log);
        let rho_max = model.rho_max();
        let tau_s = model.tau_s();
        let tail = Rising {
            c: rho_max - floor,
            a: amp,
            k: rate * tau_s,
        };
        let window_end = model.compensation_window_s / tau_s;
        let window = (window_end > 0.0).then(|| {
            let ap0 = amp + floor;
            let ap_end = amp * (-rate * model.compensation_window_s).exp() + floor;
            let drop = (ap0 - ap_end).min(model.compensation_cap_ap).max(0.0);
            Linear {
                v0: rho_max - ap0,
                slope: drop / window_end,
            }
        });
        PenaltyCurve {
            rho_max,
            window,
            tail,
            window_end: if window.is_some() { window_end } else { 0.0 },
        }
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    fn raw_penalty(&self, x: f64) -> f64 {
        match self.window {
            Some(w) if x < self.window_end => w.value(x),
            _ => self.tail.value(x),
        }
    }

    /// AP at age `x` slots, compensated and clamped at zero.
    pub fn ap(&self, x: f64) -> f64 {
        (self.rho_max - self.raw_penalty(x)).max(0.0)
    }

    /// Instantaneous penalty at age `x` slots.
    pub fn f(&self, x: f64) -> f64 {
        self.raw_penalty(x).clamp(0.0, self.rho_max)
    }

    /// Cumulative penalty `int_0^h f(x) dx`.
    pub fn big_f(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        match self.window {
            Some(w) => {
                let split = h.min(self.window_end);
                clamped_integral(&w, 0.0, split, self.rho_max)
                    + clamped_integral(&self.tail, split, h, self.rho_max)
            }
            None => clamped_integral(&self.tail, 0.0, h, self.rho_max),
        }
    }

    /// Discrete cumulative penalty `sum_{x=0}^{d} f(x)`.
    pub fn discrete_sum(&self, d: u32) -> f64 {
        (0..=d).map(|x| self.f(x as f64)).sum()
    }

    /// Prefix sums: element `d` holds `sum_{x=0}^{d} f(x)` for `d <= max_d`.
    pub fn discrete_prefix(&self, max_d: u32) -> Vec<f64> {
        let mut acc = 0.0;
        (0..=max_d)
            .map(|x| {
                acc += self.f(x as f64);
                acc
            })
            .collect()
    }

    /// `U(h) = [h f(h + d) - (F(h + d) - e_f_d)] / h^2`.
    pub fn utility(&self, h: f64, d_bar: f64, e_f_d: f64) -> f64 {
        let horizon = h + d_bar;
        (h * self.f(horizon) - (self.big_f(horizon) - e_f_d)) / (h * h)
    }

    /// Refresh-age objective `(F(h + d) - e_f_d) / h`.
    pub fn refresh_objective(&self, h: f64, d_bar: f64, e_f_d: f64) -> f64 {
        (self.big_f(h + d_bar) - e_f_d) / h
    }
}
